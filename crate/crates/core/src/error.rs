use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid error model: {0}")]
    InvalidModel(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("singular or ill-conditioned matrix ({what}, condition number {condition:.3e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("quasi-complete separation in propensity fit along covariate '{covariate}'")]
    Separation { covariate: String },

    #[error("solver did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("too many failed replicates: {failed} of {total} (budget {budget:.0}%)")]
    ReplicateBudget {
        failed: usize,
        total: usize,
        budget: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! The `fit` and `simulate` pipelines shared by the binary and the tests.

use std::fmt;
use std::path::Path;

use crate::bootstrap::{fit_and_infer, FitSpec, Inference};
use crate::error::Error;
use crate::io::config::{DataSource, RunConfig};
use crate::io::input::{load_csv, load_split, load_two_files};
use crate::io::preprocess::{preprocess, PreprocessReport};
use crate::io::render::{estimates_csv, render_fit, render_preprocess};
use crate::sim_engine::{metrics_csv, render_tables, run_monte_carlo, McConfig, McMetricsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Preprocess,
    Propensity,
    Fit,
    Bootstrap,
    Simulate,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Preprocess => "preprocess",
            Stage::Propensity => "propensity",
            Stage::Fit => "fit",
            Stage::Bootstrap => "bootstrap",
            Stage::Simulate => "simulate",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

/// An [`Error`] tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct CommandError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl std::error::Error for CommandError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl CommandError {
    /// 2 for configuration problems, 3 for data problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Config(_) | Error::InvalidModel(_) => 2,
            Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Degenerate(_)
            | Error::Separation { .. }
            | Error::Dimension(_) => 3,
            Error::NonConvergence { .. }
            | Error::Singular { .. }
            | Error::Numeric(_)
            | Error::ReplicateBudget { .. } => 4,
        }
    }
}

fn at(stage: Stage) -> impl FnOnce(Error) -> CommandError {
    move |source| CommandError { stage, source }
}

/// Fit results, rendered forms and any warnings raised along the way.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub names: Vec<String>,
    pub inference: Inference,
    pub preprocess: PreprocessReport,
    pub text: String,
    pub csv: String,
    pub warnings: Vec<String>,
}

fn write_output(dir: Option<&Path>, file: &str, contents: &str) -> Result<(), CommandError> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| at(Stage::Output)(e.into()))?;
        std::fs::write(dir.join(file), contents).map_err(|e| at(Stage::Output)(e.into()))?;
    }
    Ok(())
}

pub fn fit_command(cfg: &RunConfig) -> Result<FitOutput, CommandError> {
    cfg.check_fit().map_err(at(Stage::Config))?;
    let model = cfg.error_model().map_err(at(Stage::Config))?;
    let strategy = cfg.propensity_strategy().map_err(at(Stage::Config))?;
    let cutoff = cfg.cutoff.expect("checked above");
    let roles = cfg.roles();

    let (raw, _) = match cfg.data_source().map_err(at(Stage::Config))? {
        DataSource::Pooled(p) => load_csv(&p, &roles),
        DataSource::TwoFiles { target, external } => load_two_files(&target, &external, &roles),
        DataSource::Split { path, n_target, seed } => load_split(&path, &roles, n_target, cutoff, seed),
    }
    .map_err(at(Stage::Load))?;

    let (data, report) = preprocess(&raw, &cfg.preprocess_options()).map_err(at(Stage::Preprocess))?;
    let mut warnings = Vec::new();
    if data.n_external() == 0 {
        warnings.push("no external rows: the efficient estimator reduces to least squares".to_string());
    }
    if data.n_target() <= data.dim() {
        return Err(CommandError {
            stage: Stage::Load,
            source: Error::Data(format!(
                "{} target rows cannot identify {} coefficients",
                data.n_target(),
                data.dim()
            )),
        });
    }

    // Fail early with a propensity-stage error before the bootstrap starts.
    strategy.fit(&data, None).map_err(at(Stage::Propensity))?;

    let spec = FitSpec::new(model, strategy, cutoff);
    let inference = fit_and_infer(&data, &spec, cfg.bootstrap_b, cfg.seed, true).map_err(|e| {
        let stage = match e {
            Error::ReplicateBudget { .. } => Stage::Bootstrap,
            _ => Stage::Fit,
        };
        CommandError { stage, source: e }
    })?;

    let names = data.names().to_vec();
    let mut text = render_preprocess(&report);
    for w in &warnings {
        text.push_str(&format!("# warning: {w}\n"));
    }
    text.push_str(&render_fit(&names, &inference));
    let csv = estimates_csv(&names, &inference);
    write_output(cfg.out_dir.as_deref(), "estimates.csv", &csv)?;
    Ok(FitOutput { names, inference, preprocess: report, text, csv, warnings })
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub tables: Vec<McMetricsTable>,
    pub text: String,
    pub csv: String,
}

pub fn simulate_command(cfg: &RunConfig) -> Result<SimulateOutput, CommandError> {
    let dgp = cfg.dgp().map_err(|e| CommandError { stage: Stage::Config, source: as_config(e) })?;
    let scenarios = cfg
        .scenario_list()
        .map_err(|e| CommandError { stage: Stage::Config, source: as_config(e) })?;
    let b = cfg.sim_bootstrap_b.unwrap_or(cfg.bootstrap_b);
    if b < crate::bootstrap::MIN_REPLICATES || cfg.reps == 0 {
        return Err(CommandError {
            stage: Stage::Config,
            source: Error::Config(format!(
                "need reps >= 1 and bootstrap >= {}",
                crate::bootstrap::MIN_REPLICATES
            )),
        });
    }
    let mut tables = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let mc = McConfig::new(dgp.clone(), s, cfg.reps, b, cfg.seed);
        tables.push(run_monte_carlo(&mc).map_err(at(Stage::Simulate))?);
    }
    let text = render_tables(&tables);
    let csv = metrics_csv(&tables);
    write_output(cfg.out_dir.as_deref(), "metrics.csv", &csv)?;
    Ok(SimulateOutput { tables, text, csv })
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        let code = |source| CommandError { stage: Stage::Fit, source }.exit_code();
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::Data("x".into())), 3);
        assert_eq!(code(Error::Separation { covariate: "a".into() }), 3);
        let stuck = Error::NonConvergence { iterations: 100, score_norm: 1.0, last_iterate: vec![] };
        assert_eq!(code(stuck), 4);
        assert_eq!(code(Error::ReplicateBudget { failed: 9, total: 100, budget: 5.0 }), 4);
        let e = CommandError { stage: Stage::Bootstrap, source: Error::Numeric("nan".into()) };
        assert!(e.to_string().starts_with("[bootstrap] "));
    }
}

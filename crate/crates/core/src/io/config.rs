//! Run configuration: a flat JSON document whose keys mirror the CLI flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_models::ErrorModel;
use crate::io::input::Roles;
use crate::io::preprocess::PreprocessOptions;
use crate::propensity::PropensityStrategy;
use crate::sim_engine::{DgpSpec, Scenario, Simulation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Pooled CSV with a source-flag column.
    pub data: Option<PathBuf>,
    /// Target-only CSV (two-file mode).
    pub target_data: Option<PathBuf>,
    /// External-only CSV (two-file mode).
    pub external_data: Option<PathBuf>,
    /// Draw this many target rows at random from `data`, dichotomizing the rest.
    pub split_target: Option<usize>,
    pub split_seed: u64,

    pub source_column: String,
    pub outcome_column: String,
    pub dichotomized_column: String,
    pub covariates: Vec<String>,
    pub cutoff: Option<f64>,

    pub model: String,
    pub propensity: String,
    pub bootstrap_b: usize,
    pub seed: u64,

    pub categorical: BTreeMap<String, Vec<f64>>,
    pub log_transform: Vec<String>,
    pub standardize: bool,
    /// Applied with `standardize`; `null` disables extreme-value exclusion.
    pub sd_threshold: Option<f64>,

    pub out_dir: Option<PathBuf>,

    pub simulation: String,
    pub scenarios: Vec<String>,
    pub reps: usize,
    pub n_total: usize,
    pub pi: f64,
    /// Monte Carlo bootstrap replicates per replication (defaults to `bootstrap_b`).
    pub sim_bootstrap_b: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            target_data: None,
            external_data: None,
            split_target: None,
            split_seed: 0,
            source_column: "r".into(),
            outcome_column: "y".into(),
            dichotomized_column: "z".into(),
            covariates: Vec::new(),
            cutoff: None,
            model: "normal".into(),
            propensity: "logistic".into(),
            bootstrap_b: 1000,
            seed: 20240601,
            categorical: BTreeMap::new(),
            log_transform: Vec::new(),
            standardize: false,
            sd_threshold: Some(4.0),
            out_dir: None,
            simulation: "sim2".into(),
            scenarios: vec!["I".into(), "II".into(), "III".into()],
            reps: 1000,
            n_total: 500,
            pi: 0.5,
            sim_bootstrap_b: None,
        }
    }
}

/// Where the fit command reads its data from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Pooled(PathBuf),
    TwoFiles { target: PathBuf, external: PathBuf },
    Split { path: PathBuf, n_target: usize, seed: u64 },
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn roles(&self) -> Roles {
        Roles {
            source: self.source_column.clone(),
            outcome: self.outcome_column.clone(),
            dichotomized: self.dichotomized_column.clone(),
            covariates: self.covariates.clone(),
        }
    }

    pub fn data_source(&self) -> Result<DataSource> {
        match (&self.data, &self.target_data, &self.external_data, self.split_target) {
            (Some(p), None, None, None) => Ok(DataSource::Pooled(p.clone())),
            (Some(p), None, None, Some(n)) => {
                Ok(DataSource::Split { path: p.clone(), n_target: n, seed: self.split_seed })
            }
            (None, Some(t), Some(e), None) => {
                Ok(DataSource::TwoFiles { target: t.clone(), external: e.clone() })
            }
            _ => Err(Error::Config(
                "give either 'data' (optionally with 'split_target') or both 'target_data' and 'external_data'"
                    .into(),
            )),
        }
    }

    pub fn error_model(&self) -> Result<ErrorModel> {
        self.model.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn propensity_strategy(&self) -> Result<PropensityStrategy> {
        self.propensity.parse()
    }

    pub fn preprocess_options(&self) -> PreprocessOptions {
        PreprocessOptions {
            categorical: self.categorical.clone(),
            log_transform: self.log_transform.clone(),
            standardize: self.standardize,
            sd_threshold: self.sd_threshold,
        }
    }

    /// Validates the fit-specific keys.
    pub fn check_fit(&self) -> Result<()> {
        self.data_source()?;
        if self.covariates.is_empty() {
            return Err(Error::Config("no covariate columns configured".into()));
        }
        if self.cutoff.is_none() {
            return Err(Error::Config("'cutoff' is required to dichotomize target outcomes".into()));
        }
        if self.bootstrap_b < crate::bootstrap::MIN_REPLICATES {
            return Err(Error::Config(format!(
                "bootstrap_b must be at least {}",
                crate::bootstrap::MIN_REPLICATES
            )));
        }
        self.error_model()?;
        self.propensity_strategy()?;
        Ok(())
    }

    pub fn dgp(&self) -> Result<DgpSpec> {
        let simulation: Simulation = self.simulation.parse()?;
        let mut spec = DgpSpec::new(simulation);
        spec.n_total = self.n_total;
        spec.pi = self.pi;
        if let Some(c) = self.cutoff {
            spec.cutoff = c;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn scenario_list(&self) -> Result<Vec<Scenario>> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios configured".into()));
        }
        self.scenarios.iter().map(|s| s.parse()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_with_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"data": "d.csv", "covariates": ["a"], "cutoff": 25, "propensity": "constant"}"#,
        )
        .unwrap();
        assert_eq!(cfg.bootstrap_b, 1000);
        assert_eq!(cfg.data_source().unwrap(), DataSource::Pooled("d.csv".into()));
        assert_eq!(cfg.propensity_strategy().unwrap(), PropensityStrategy::Constant);
        cfg.check_fit().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"bootsrap": 3}"#).is_err());
        let cfg = RunConfig { model: "cauchy".into(), ..Default::default() };
        assert!(matches!(cfg.error_model(), Err(Error::Config(_))));
        let cfg = RunConfig::default();
        assert!(matches!(cfg.check_fit(), Err(Error::Config(_))));
        let cfg = RunConfig {
            target_data: Some("t.csv".into()),
            ..Default::default()
        };
        assert!(cfg.data_source().is_err());
    }
}

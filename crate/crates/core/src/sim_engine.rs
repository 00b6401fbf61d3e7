//! Simulation designs and the Monte Carlo harness that summarizes estimator
//! performance as Bias / SSD / ESE / CR95 tables.

use std::fmt::Write as _;
use std::str::FromStr;

use log::debug;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::{bootstrap_wls, fit_and_infer, FitSpec};
use crate::data::{FusedDataset, Observation};
use crate::error::{Error, Result};
use crate::error_models::ErrorModel;
use crate::estimators::{wls_fit, Estimator, Z_95};
use crate::linalg::{covariance, min_eigenvalue};
use crate::propensity::{ColumnRoles, PropensityStrategy};
use crate::rng::{derive_seed, substream, StreamTag};

/// Largest tolerated share of failed Monte Carlo replications.
pub const MC_FAILURE_BUDGET: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Simulation {
    /// Same covariate law in both populations, `p(x) = π`.
    Sim1,
    /// Population-specific covariate laws, `p(x)` estimated.
    Sim2,
}

impl FromStr for Simulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "sim1" => Ok(Simulation::Sim1),
            "2" | "sim2" => Ok(Simulation::Sim2),
            other => Err(Error::Config(format!("unknown simulation '{other}' (expected sim1 or sim2)"))),
        }
    }
}

impl std::fmt::Display for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Simulation::Sim1 => "sim1",
            Simulation::Sim2 => "sim2",
        })
    }
}

/// Working-model scenario: correct mixture, standard normal, standard logistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Scenario {
    I,
    II,
    III,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::I, Scenario::II, Scenario::III];

    pub fn working_model(self, simulation: Simulation) -> ErrorModel {
        match self {
            Scenario::I => true_error_model(simulation),
            Scenario::II => ErrorModel::StandardNormal,
            Scenario::III => ErrorModel::StandardLogistic,
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            other => Err(Error::Config(format!("unknown scenario '{other}' (expected I, II, III)"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
        })
    }
}

pub fn true_error_model(simulation: Simulation) -> ErrorModel {
    match simulation {
        Simulation::Sim1 => ErrorModel::sim1_mixture(),
        Simulation::Sim2 => ErrorModel::sim2_mixture(),
    }
}

/// Data-generating process of one simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub simulation: Simulation,
    /// Pooled sample size `N = n + m`.
    pub n_total: usize,
    /// Target share `π = n / N`.
    pub pi: f64,
    pub cutoff: f64,
    pub beta_true: [f64; 3],
}

impl DgpSpec {
    /// `N = 500`, `π = 0.5`, `c = 0`, `β = (0, 1, -1)`.
    pub fn new(simulation: Simulation) -> Self {
        DgpSpec { simulation, n_total: 500, pi: 0.5, cutoff: 0.0, beta_true: [0.0, 1.0, -1.0] }
    }

    /// Sizes the pooled sample from a target size: `N = round(n_target / π)`.
    pub fn with_target_size(mut self, n_target: usize) -> Self {
        self.n_total = (n_target as f64 / self.pi).round() as usize;
        self
    }

    pub fn n_target(&self) -> usize {
        (self.pi * self.n_total as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Config(format!("target share {} must lie in (0, 1)", self.pi)));
        }
        if self.n_target() < 3 || self.n_total <= self.n_target() {
            return Err(Error::Config("simulation needs at least 3 target and 1 external row".into()));
        }
        Ok(())
    }

    pub fn propensity_strategy(&self) -> PropensityStrategy {
        match self.simulation {
            Simulation::Sim1 => PropensityStrategy::Constant,
            Simulation::Sim2 => PropensityStrategy::DensityRatio(Some(ColumnRoles {
                binary: vec![1],
                continuous: vec![2],
            })),
        }
    }

    pub fn fit_spec(&self, scenario: Scenario) -> FitSpec {
        FitSpec::new(scenario.working_model(self.simulation), self.propensity_strategy(), self.cutoff)
    }
}

fn draw_covariates<R: Rng>(simulation: Simulation, target: bool, rng: &mut R) -> Vec<f64> {
    let (p1, uniform) = match (simulation, target) {
        (_, true) | (Simulation::Sim1, false) => (0.5, false),
        (Simulation::Sim2, false) => (0.3, true),
    };
    let x1 = if rng.random::<f64>() < p1 { 1.0 } else { 0.0 };
    let x2 = if uniform {
        rng.random_range(-2.0..2.0)
    } else {
        StandardNormal.sample(rng)
    };
    vec![1.0, x1, x2]
}

/// One simulated pooled dataset: target rows first, then external rows
/// carrying only `z = I(y ≤ c)`.
pub fn generate(spec: &DgpSpec, seed: u64) -> Result<FusedDataset> {
    spec.validate()?;
    let mut rng = substream(seed, StreamTag::Data, 0);
    let errors = true_error_model(spec.simulation);
    let n_target = spec.n_target();
    let mut rows = Vec::with_capacity(spec.n_total);
    for i in 0..spec.n_total {
        let target = i < n_target;
        let x = draw_covariates(spec.simulation, target, &mut rng);
        let mean: f64 = x.iter().zip(&spec.beta_true).map(|(a, b)| a * b).sum();
        let y = mean + errors.sample(&mut rng);
        rows.push(if target {
            Observation::target(y, x)
        } else {
            Observation::external(y <= spec.cutoff, x)
        });
    }
    FusedDataset::new(vec!["Intercept".into(), "X1".into(), "X2".into()], rows)
}

/// Which estimators a Monte Carlo run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorSet {
    All,
    /// Only the WLS benchmark with its weighted-bootstrap ESE.
    WlsOnly,
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub scenario: Scenario,
    pub reps: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub estimators: EstimatorSet,
    /// Run replications on the rayon pool.
    pub parallel: bool,
}

impl McConfig {
    pub fn new(dgp: DgpSpec, scenario: Scenario, reps: usize, bootstrap: usize, seed: u64) -> Self {
        McConfig { dgp, scenario, reps, bootstrap, seed, estimators: EstimatorSet::All, parallel: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub scenario: Scenario,
    pub estimator: Estimator,
    pub coef: usize,
    pub bias: f64,
    pub ssd: f64,
    pub ese: f64,
    pub cr95: f64,
}

/// Aggregated Monte Carlo metrics for one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct McMetricsTable {
    pub simulation: Simulation,
    pub scenario: Scenario,
    pub reps: usize,
    pub completed: usize,
    pub failures: usize,
    pub bootstrap: usize,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    /// Share of external rows with `z = 1`, averaged over replications.
    pub external_z_rate: f64,
    /// Smallest eigenvalue of `Var(β_ls) - Var(β̂*)` over all replications.
    pub min_gain_eigenvalue: Option<f64>,
    pub caveat: Option<String>,
}

impl McMetricsTable {
    pub fn get(&self, estimator: Estimator, coef: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.coef == coef)
    }

    pub fn estimators(&self) -> Vec<Estimator> {
        let mut out: Vec<Estimator> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.estimator) {
                out.push(r.estimator);
            }
        }
        out
    }
}

struct RepOutcome {
    // per estimator: (estimate, ese)
    fits: Vec<(Estimator, DVector<f64>, Vec<f64>)>,
    z_rate: f64,
    min_gain: Option<f64>,
}

fn one_replication(cfg: &McConfig, spec: &FitSpec, r: usize) -> Result<RepOutcome> {
    let data = generate(&cfg.dgp, derive_seed(cfg.seed, StreamTag::Data, r as u64))?;
    let boot_seed = derive_seed(cfg.seed, StreamTag::BootstrapSeed, r as u64);
    let external: Vec<bool> = data.rows().iter().filter(|o| !o.is_target()).map(|o| o.z(cfg.dgp.cutoff)).collect();
    let z_rate = external.iter().filter(|z| **z).count() as f64 / external.len().max(1) as f64;
    match cfg.estimators {
        EstimatorSet::All => {
            let inf = fit_and_infer(&data, spec, cfg.bootstrap, boot_seed, false)?;
            let gain = min_eigenvalue(&(&inf.ls.covariance - &inf.combined.covariance));
            let fits = inf
                .reports()
                .iter()
                .map(|rep| (rep.estimator, rep.beta.clone(), rep.ese.clone()))
                .collect();
            Ok(RepOutcome { fits, z_rate, min_gain: Some(gain) })
        }
        EstimatorSet::WlsOnly => {
            let beta = wls_fit(data.rows(), &spec.model)?;
            let reps = bootstrap_wls(&data, &spec.model, cfg.bootstrap, boot_seed, false)?;
            let ese = covariance(&reps).diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
            Ok(RepOutcome { fits: vec![(Estimator::Wls, beta, ese)], z_rate, min_gain: None })
        }
    }
}

/// Repeats generate → fit → bootstrap `reps` times and aggregates
/// Bias / SSD / ESE / CR95 against the true coefficients.
pub fn run_monte_carlo(cfg: &McConfig) -> Result<McMetricsTable> {
    cfg.dgp.validate()?;
    if cfg.reps < 2 {
        return Err(Error::Config("Monte Carlo needs at least two replications".into()));
    }
    let spec = cfg.dgp.fit_spec(cfg.scenario);
    let outcomes: Vec<Result<RepOutcome>> = if cfg.parallel {
        (0..cfg.reps).into_par_iter().map(|r| one_replication(cfg, &spec, r)).collect()
    } else {
        (0..cfg.reps).map(|r| one_replication(cfg, &spec, r)).collect()
    };
    let mut done = Vec::with_capacity(cfg.reps);
    let mut failures = 0;
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(v) => done.push(v),
            Err(e) => {
                debug!("replication {r} failed: {e}");
                failures += 1;
            }
        }
    }
    if failures as f64 > MC_FAILURE_BUDGET * cfg.reps as f64 {
        return Err(Error::ReplicateBudget {
            failed: failures,
            total: cfg.reps,
            budget: MC_FAILURE_BUDGET * 100.0,
        });
    }
    let n = done.len() as f64;
    let truth = cfg.dgp.beta_true;
    let mut rows = Vec::new();
    let n_est = done[0].fits.len();
    for k in 0..n_est {
        let estimator = done[0].fits[k].0;
        for j in 0..truth.len() {
            let est: Vec<f64> = done.iter().map(|o| o.fits[k].1[j]).collect();
            let ese: Vec<f64> = done.iter().map(|o| o.fits[k].2[j]).collect();
            let mean = est.iter().sum::<f64>() / n;
            let ssd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let covered = est
                .iter()
                .zip(&ese)
                .filter(|(e, s)| (*e - truth[j]).abs() <= Z_95 * **s)
                .count();
            rows.push(MetricRow {
                scenario: cfg.scenario,
                estimator,
                coef: j,
                bias: mean - truth[j],
                ssd,
                ese: ese.iter().sum::<f64>() / n,
                cr95: covered as f64 / n,
            });
        }
    }
    let min_gain_eigenvalue = done
        .iter()
        .filter_map(|o| o.min_gain)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))));
    let caveat = match cfg.dgp.simulation {
        Simulation::Sim1 => Some(
            "sim1 error mixture as printed has mean 6; it is recentered to mean zero, so the \
             external Z=1 rate differs from the reported ~60%"
                .to_string(),
        ),
        Simulation::Sim2 => None,
    };
    Ok(McMetricsTable {
        simulation: cfg.dgp.simulation,
        scenario: cfg.scenario,
        reps: cfg.reps,
        completed: done.len(),
        failures,
        bootstrap: cfg.bootstrap,
        seed: cfg.seed,
        rows,
        external_z_rate: done.iter().map(|o| o.z_rate).sum::<f64>() / n,
        min_gain_eigenvalue,
        caveat,
    })
}

fn coef_label(j: usize) -> String {
    format!("beta{j}")
}

/// Machine-readable metrics: `scenario,estimator,coef,bias,ssd,ese,cr95`.
pub fn metrics_csv(tables: &[McMetricsTable]) -> String {
    let mut out = String::from("scenario,estimator,coef,bias,ssd,ese,cr95\n");
    for t in tables {
        for r in &t.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.scenario,
                r.estimator,
                coef_label(r.coef),
                r.bias,
                r.ssd,
                r.ese,
                r.cr95
            );
        }
    }
    out
}

/// Aligned text table: one block of columns per scenario, one row per
/// (coefficient, metric).
pub fn render_tables(tables: &[McMetricsTable]) -> String {
    let mut out = String::new();
    if tables.is_empty() {
        return out;
    }
    let cols: Vec<(&McMetricsTable, Estimator)> =
        tables.iter().flat_map(|t| t.estimators().into_iter().map(move |e| (t, e))).collect();
    let width = 14;
    let _ = write!(out, "{:<10}{:<6}", "", "");
    for t in tables {
        let span = t.estimators().len() * width;
        let _ = write!(out, "{:^span$}", format!("Scenario {}", t.scenario));
    }
    out.push('\n');
    let _ = write!(out, "{:<10}{:<6}", "", "");
    for (_, e) in &cols {
        let _ = write!(out, "{:>width$}", e.label());
    }
    out.push('\n');
    let p = tables[0].rows.iter().map(|r| r.coef).max().map_or(0, |m| m + 1);
    for j in 0..p {
        for (mi, metric) in ["Bias", "SSD", "ESE", "CR95"].iter().enumerate() {
            let label = if mi == 0 { coef_label(j) } else { String::new() };
            let _ = write!(out, "{:<10}{:<6}", label, metric);
            for (t, e) in &cols {
                let v = t.get(*e, j).map(|r| match mi {
                    0 => r.bias,
                    1 => r.ssd,
                    2 => r.ese,
                    _ => r.cr95,
                });
                match v {
                    Some(v) => {
                        let _ = write!(out, "{:>width$.3}", v);
                    }
                    None => {
                        let _ = write!(out, "{:>width$}", "-");
                    }
                }
            }
            out.push('\n');
        }
    }
    for t in tables {
        let _ = writeln!(
            out,
            "# {} scenario {}: {}/{} replications, B = {}, seed = {}, external Z=1 rate = {:.3}",
            t.simulation, t.scenario, t.completed, t.reps, t.bootstrap, t.seed, t.external_z_rate
        );
        if let Some(c) = &t.caveat {
            let _ = writeln!(out, "# caveat: {c}");
        }
    }
    out
}

//! Weighted (multiplier) bootstrap with i.i.d. Exp(1) observation weights.
//!
//! One weight vector drives the propensity refit, the WLS fit and the
//! efficient-score root of a replicate, so the replicate matrix captures the
//! joint law of `(β_ls, β_eff)` that the combination weights depend on.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::data::FusedDataset;
use crate::error::{Error, Result};
use crate::error_models::ErrorModel;
use crate::estimators::{
    combine, eff_fit_weighted, wls_fit_weighted, Diagnostics, Estimator, FitReport, ScoreContext,
    SolverOptions,
};
use crate::linalg::{covariance, cross_covariance};
use crate::propensity::PropensityStrategy;
use crate::rng::{substream, StreamTag};

/// Largest tolerated share of non-converged replicates.
pub const FAILURE_BUDGET: f64 = 0.05;

/// Smallest accepted replicate count.
pub const MIN_REPLICATES: usize = 100;

/// How a dataset is fitted: the working model, the propensity strategy and
/// the cutoff, plus solver settings.
#[derive(Debug, Clone)]
pub struct FitSpec {
    pub model: ErrorModel,
    pub propensity: PropensityStrategy,
    pub cutoff: f64,
    pub solver: SolverOptions,
}

impl FitSpec {
    pub fn new(model: ErrorModel, propensity: PropensityStrategy, cutoff: f64) -> Self {
        FitSpec { model, propensity, cutoff, solver: SolverOptions::default() }
    }
}

/// `count` i.i.d. Exp(1) draws.
pub fn exp1_weights<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| Exp1.sample(rng)).collect()
}

/// Joint point estimates of one (possibly weighted) fit.
#[derive(Debug, Clone)]
pub struct FitPair {
    pub ls: DVector<f64>,
    pub eff: DVector<f64>,
    pub diagnostics: Diagnostics,
}

/// Propensity refit, WLS, and efficient-score root under common weights.
/// The efficient-score solve starts at the weighted WLS solution.
pub fn weighted_fit_pair(data: &FusedDataset, spec: &FitSpec, weights: Option<&[f64]>) -> Result<FitPair> {
    let propensity = spec.propensity.fit(data, weights)?;
    let ls = wls_fit_weighted(data.rows(), weights, &spec.model)?;
    let ctx = ScoreContext { model: spec.model.clone(), propensity, cutoff: spec.cutoff };
    let (eff, diagnostics) = eff_fit_weighted(data, &ctx, weights, Some(&ls), &spec.solver)?;
    Ok(FitPair { ls, eff, diagnostics })
}

/// Stored replicates; row `b` of `ls` / `eff` is replicate `b` among the
/// converged ones, in replicate-index order.
#[derive(Debug, Clone)]
pub struct BootstrapReplicates {
    pub requested: usize,
    pub ls: DMatrix<f64>,
    pub eff: DMatrix<f64>,
    pub seed: u64,
    pub failures: usize,
}

impl BootstrapReplicates {
    pub fn len(&self) -> usize {
        self.ls.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.ls.nrows() == 0
    }
}

fn replicate(data: &FusedDataset, spec: &FitSpec, seed: u64, b: usize) -> Result<FitPair> {
    let mut rng = substream(seed, StreamTag::Bootstrap, b as u64);
    let w = exp1_weights(data.len(), &mut rng);
    weighted_fit_pair(data, spec, Some(&w))
}

fn check_budget(failures: usize, total: usize, budget: f64) -> Result<()> {
    if failures as f64 > budget * total as f64 {
        return Err(Error::ReplicateBudget { failed: failures, total, budget: budget * 100.0 });
    }
    Ok(())
}

fn stack(rows: &[DVector<f64>], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

/// `b` replicates, each from its own `(seed, index)` stream. Runs in parallel
/// when `parallel` is set; the output is identical either way.
pub fn run_bootstrap_with(
    data: &FusedDataset,
    spec: &FitSpec,
    b: usize,
    seed: u64,
    parallel: bool,
) -> Result<BootstrapReplicates> {
    if b < MIN_REPLICATES {
        return Err(Error::Config(format!("bootstrap needs at least {MIN_REPLICATES} replicates, got {b}")));
    }
    let results: Vec<Result<FitPair>> = if parallel {
        (0..b).into_par_iter().map(|i| replicate(data, spec, seed, i)).collect()
    } else {
        (0..b).map(|i| replicate(data, spec, seed, i)).collect()
    };
    let p = data.dim();
    let mut ls = Vec::with_capacity(b);
    let mut eff = Vec::with_capacity(b);
    let mut failures = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(pair) if pair.ls.iter().chain(pair.eff.iter()).all(|v| v.is_finite()) => {
                ls.push(pair.ls);
                eff.push(pair.eff);
            }
            Ok(_) => failures += 1,
            Err(e) => {
                debug!("bootstrap replicate {i} failed: {e}");
                failures += 1;
            }
        }
    }
    check_budget(failures, b, FAILURE_BUDGET)?;
    if failures > 0 {
        warn!("{failures} of {b} bootstrap replicates dropped");
    }
    Ok(BootstrapReplicates { requested: b, ls: stack(&ls, p), eff: stack(&eff, p), seed, failures })
}

/// Parallel [`run_bootstrap_with`].
pub fn run_bootstrap(data: &FusedDataset, spec: &FitSpec, b: usize, seed: u64) -> Result<BootstrapReplicates> {
    run_bootstrap_with(data, spec, b, seed, true)
}

/// Weighted bootstrap of the WLS estimator alone (`b × p`).
pub fn bootstrap_wls(data: &FusedDataset, model: &ErrorModel, b: usize, seed: u64, parallel: bool) -> Result<DMatrix<f64>> {
    if b < MIN_REPLICATES {
        return Err(Error::Config(format!("bootstrap needs at least {MIN_REPLICATES} replicates, got {b}")));
    }
    let one = |i: usize| {
        let mut rng = substream(seed, StreamTag::Bootstrap, i as u64);
        let w = exp1_weights(data.len(), &mut rng);
        wls_fit_weighted(data.rows(), Some(&w), model)
    };
    let fits: Vec<Result<DVector<f64>>> = if parallel {
        (0..b).into_par_iter().map(one).collect()
    } else {
        (0..b).map(one).collect()
    };
    let ok: Vec<DVector<f64>> = fits.into_iter().filter_map(Result::ok).collect();
    check_budget(b - ok.len(), b, FAILURE_BUDGET)?;
    Ok(stack(&ok, data.dim()))
}

/// Reports for the three estimators.
#[derive(Debug, Clone)]
pub struct Inference {
    pub ls: FitReport,
    pub eff: FitReport,
    pub combined: FitReport,
    /// Ridge applied to `Var(d)`.
    pub ridge: f64,
    /// Per-coefficient Gram-form ESE minus empirical ESE of the combined replicates.
    pub combined_ese_gap: Vec<f64>,
}

impl Inference {
    pub fn reports(&self) -> [&FitReport; 3] {
        [&self.ls, &self.eff, &self.combined]
    }

    pub fn report(&self, which: Estimator) -> &FitReport {
        match which {
            Estimator::Wls => &self.ls,
            Estimator::Efficient => &self.eff,
            Estimator::Combined => &self.combined,
        }
    }
}

/// Bootstrap covariance blocks, weighting matrix and the combined estimator.
pub fn infer(point_ls: &DVector<f64>, point_eff: &DVector<f64>, reps: &BootstrapReplicates) -> Result<Inference> {
    let p = point_ls.len();
    if reps.ls.ncols() != p || reps.eff.ncols() != p || point_eff.len() != p {
        return Err(Error::Dimension("replicate width differs from coefficient count".into()));
    }
    if reps.len() < 2 {
        return Err(Error::Data("need at least two bootstrap replicates".into()));
    }
    let mut d = &reps.eff - &reps.ls;
    // Contrasts at solver-noise level (e.g. no external information) carry no
    // signal; inverting their covariance would only amplify noise.
    let noise = 1e-9 * (1.0 + reps.ls.amax());
    if d.amax() <= noise && (point_eff - point_ls).amax() <= noise {
        d.fill(0.0);
    }
    let cov_ls = covariance(&reps.ls);
    let cov_eff = covariance(&reps.eff);
    let cov_d = covariance(&d);
    let cov_ls_d = cross_covariance(&reps.ls, &d);
    let comb = combine(point_ls, point_eff, &cov_ls, &cov_d, &cov_ls_d)?;

    let combined_reps = &reps.ls + &d * comb.w.transpose();
    let empirical = covariance(&combined_reps);

    let mut combined = FitReport::new(Estimator::Combined, comb.beta.clone(), comb.covariance.clone());
    let gap = combined
        .ese
        .iter()
        .zip(empirical.diagonal().iter())
        .map(|(g, e)| g - e.max(0.0).sqrt())
        .collect();
    combined.w = Some(comb.w);
    combined.empirical_covariance = Some(empirical);
    Ok(Inference {
        ls: FitReport::new(Estimator::Wls, point_ls.clone(), cov_ls),
        eff: FitReport::new(Estimator::Efficient, point_eff.clone(), cov_eff),
        combined,
        ridge: comb.ridge,
        combined_ese_gap: gap,
    })
}

/// Point fits plus bootstrap inference for all three estimators.
pub fn fit_and_infer(data: &FusedDataset, spec: &FitSpec, b: usize, seed: u64, parallel: bool) -> Result<Inference> {
    let point = weighted_fit_pair(data, spec, None)?;
    let reps = run_bootstrap_with(data, spec, b, seed, parallel)?;
    let mut inf = infer(&point.ls, &point.eff, &reps)?;
    inf.eff.diagnostics = Some(point.diagnostics);
    Ok(inf)
}

//! The three point estimators: the target-only weighted least squares
//! benchmark, the locally efficient-score estimator, and the combination of
//! the two with a variance-minimizing weighting matrix.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{FusedDataset, Observation};
use crate::error::{Error, Result};
use crate::error_models::ErrorModel;
use crate::linalg::{condition_number, solve_checked, sym_pinv, symmetrize};
use crate::propensity::PropensityModel;

/// Normal quantile used for every two-sided 95% interval.
pub const Z_95: f64 = 1.96;

/// Which estimator a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Estimator {
    /// Target-only weighted least squares.
    Wls,
    /// Root of the locally efficient score.
    Efficient,
    /// WLS plus the weighted efficient-minus-WLS contrast.
    Combined,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Wls, Estimator::Efficient, Estimator::Combined];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Wls => "beta_ls",
            Estimator::Efficient => "beta_eff",
            Estimator::Combined => "beta_combined",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Everything the efficient score needs besides the observation and `β`.
#[derive(Debug, Clone)]
pub struct ScoreContext {
    pub model: ErrorModel,
    pub propensity: PropensityModel,
    pub cutoff: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub score_norm: f64,
    pub damping_steps: usize,
}

/// Point estimate with its uncertainty summary.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub estimator: Estimator,
    pub beta: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub ese: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
    /// Weighting matrix; combined estimator only.
    pub w: Option<DMatrix<f64>>,
    /// Empirical covariance of the materialized combined replicates.
    pub empirical_covariance: Option<DMatrix<f64>>,
    pub diagnostics: Option<Diagnostics>,
}

impl FitReport {
    pub fn new(estimator: Estimator, beta: DVector<f64>, mut covariance: DMatrix<f64>) -> Self {
        symmetrize(&mut covariance);
        let ese: Vec<f64> = covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
        let ci95 = beta
            .iter()
            .zip(&ese)
            .map(|(b, se)| (b - Z_95 * se, b + Z_95 * se))
            .collect();
        FitReport {
            estimator,
            beta,
            covariance,
            ese,
            ci95,
            w: None,
            empirical_covariance: None,
            diagnostics: None,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn target_design<'a>(
    rows: &'a [Observation],
    weights: Option<&[f64]>,
) -> Result<(Vec<(&'a Observation, f64)>, usize)> {
    if let Some(w) = weights {
        if w.len() != rows.len() {
            return Err(Error::Dimension(format!("{} weights for {} rows", w.len(), rows.len())));
        }
    }
    let p = rows.first().map(|r| r.x.len()).unwrap_or(0);
    let picked: Vec<(&Observation, f64)> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_target())
        .map(|(i, r)| (r, weights.map_or(1.0, |w| w[i])))
        .collect();
    if picked.len() < p || p == 0 {
        return Err(Error::Data(format!(
            "{} target rows for {} coefficients",
            picked.len(),
            p
        )));
    }
    Ok((picked, p))
}

/// Weighted least squares on the target rows of `rows` (external rows are
/// skipped): solves `(Σ w v*⁻¹ x xᵀ) β = Σ w v*⁻¹ x y`.
pub fn wls_fit(rows: &[Observation], model: &ErrorModel) -> Result<DVector<f64>> {
    wls_fit_weighted(rows, None, model)
}

/// [`wls_fit`] with per-row multiplier weights aligned to `rows`.
pub fn wls_fit_weighted(
    rows: &[Observation],
    weights: Option<&[f64]>,
    model: &ErrorModel,
) -> Result<DVector<f64>> {
    let (picked, p) = target_design(rows, weights)?;
    let inv_v = 1.0 / model.variance();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (obs, w) in picked {
        let y = obs.y().expect("target row");
        let scale = w * inv_v;
        for i in 0..p {
            rhs[i] += scale * obs.x[i] * y;
            for j in 0..=i {
                gram[(i, j)] += scale * obs.x[i] * obs.x[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    solve_checked(&gram, &rhs, 1e12, "WLS normal matrix")
}

/// Sandwich covariance `Â₀⁻¹ B̂₀ Â₀⁻ᵀ / n` of the WLS estimator.
pub fn wls_sandwich_cov(
    rows: &[Observation],
    beta: &DVector<f64>,
    model: &ErrorModel,
) -> Result<DMatrix<f64>> {
    let (picked, p) = target_design(rows, None)?;
    let n = picked.len() as f64;
    let inv_v = 1.0 / model.variance();
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DMatrix::<f64>::zeros(p, p);
    for (obs, _) in picked {
        let x = DVector::from_column_slice(&obs.x);
        let resid = obs.y().expect("target row") - dot(&obs.x, beta.as_slice());
        let xxt = &x * x.transpose();
        a -= inv_v * &xxt;
        b += (inv_v * inv_v * resid * resid) * xxt;
    }
    a /= n;
    b /= n;
    let condition = condition_number(&a);
    if !(condition <= 1e12) {
        return Err(Error::Singular { what: "sandwich bread matrix", condition });
    }
    let a_inv = a.try_inverse().ok_or(Error::Singular { what: "sandwich bread matrix", condition })?;
    let mut cov = &a_inv * b * a_inv.transpose() / n;
    symmetrize(&mut cov);
    Ok(cov)
}

/// The scalar factor multiplying `x` in the efficient score, with `p` the
/// propensity at `obs.x` and `eta = βᵀx`.
///
/// `[r ε (F*-1) F* + (p - r)(F* - z) m1] / D`, `D = m1²(1-p) + F*(F*-1) v*`.
pub(crate) fn score_factor(
    model: &ErrorModel,
    variance: f64,
    cutoff: f64,
    obs: &Observation,
    eta: f64,
    p: f64,
) -> Result<f64> {
    let f = model.functionals(cutoff - eta);
    let m = f.m1;
    // F*(F*-1) = -F*·S*; the survival side keeps precision in the upper tail.
    let f_fm1 = -f.cdf * f.sf;
    let denom = m * m * (1.0 - p) + f_fm1 * variance;
    if !(denom.abs() >= 1e-300) {
        return Err(Error::Numeric(format!(
            "efficient-score denominator {denom:e} at a = {}",
            cutoff - eta
        )));
    }
    let r = obs.r();
    let z = if obs.z(cutoff) { 1.0 } else { 0.0 };
    let target_term = match obs.y() {
        Some(y) => (y - eta) * f_fm1,
        None => 0.0,
    };
    Ok((r * target_term + (p - r) * (f.cdf - z) * m) / denom)
}

/// Locally efficient score of one observation under the working model in `ctx`.
pub fn efficient_score(obs: &Observation, beta: &[f64], ctx: &ScoreContext) -> Result<Vec<f64>> {
    if beta.len() != obs.x.len() {
        return Err(Error::Dimension(format!(
            "beta has length {}, x has length {}",
            beta.len(),
            obs.x.len()
        )));
    }
    let p = ctx.propensity.evaluate(&obs.x);
    let eta = dot(&obs.x, beta);
    let k = score_factor(&ctx.model, ctx.model.variance(), ctx.cutoff, obs, eta, p)?;
    Ok(obs.x.iter().map(|v| k * v).collect())
}

/// `r(y - βᵀx) c(x) + (r - p(x)) (z - F(c - βᵀx)) b(x)`: an element of the
/// orthogonal complement of the nuisance tangent space when `ctx.model` is the
/// true error law. Used to check mean-zero properties.
pub fn lambda_perp_element<C, B>(
    obs: &Observation,
    beta: &[f64],
    ctx: &ScoreContext,
    c_fn: C,
    b_fn: B,
) -> Vec<f64>
where
    C: Fn(&[f64]) -> Vec<f64>,
    B: Fn(&[f64]) -> Vec<f64>,
{
    let eta = dot(&obs.x, beta);
    let p = ctx.propensity.evaluate(&obs.x);
    let r = obs.r();
    let z = if obs.z(ctx.cutoff) { 1.0 } else { 0.0 };
    let resid = obs.y().map_or(0.0, |y| y - eta);
    let ext = (r - p) * (z - ctx.model.cdf(ctx.cutoff - eta));
    let cv = c_fn(&obs.x);
    let bv = b_fn(&obs.x);
    cv.iter().zip(&bv).map(|(c, b)| r * resid * c + ext * b).collect()
}

/// Stopping rules for the efficient-score root finder.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub max_condition: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iter: 100, max_halvings: 30, max_condition: 1e12 }
    }
}

/// The weighted mean efficient score over a pooled sample, with the
/// propensity evaluated once per row.
pub struct ScoreEquation<'a> {
    rows: &'a [Observation],
    propensity: Vec<f64>,
    weights: Option<&'a [f64]>,
    total_weight: f64,
    model: &'a ErrorModel,
    variance: f64,
    cutoff: f64,
}

impl<'a> ScoreEquation<'a> {
    pub fn new(data: &'a FusedDataset, ctx: &'a ScoreContext, weights: Option<&'a [f64]>) -> Result<Self> {
        let rows = data.rows();
        if rows.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        let total_weight = match weights {
            Some(w) => {
                if w.len() != rows.len() {
                    return Err(Error::Dimension(format!("{} weights for {} rows", w.len(), rows.len())));
                }
                w.iter().sum()
            }
            None => rows.len() as f64,
        };
        if !(total_weight > 0.0) {
            return Err(Error::Data("weights are all zero".into()));
        }
        let external_weight: f64 = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.is_target())
            .map(|(i, _)| weights.map_or(1.0, |w| w[i]))
            .sum();
        // Without external mass P(R = 1 | x) is exactly one and the score is
        // the WLS score; the propensity clamp would otherwise perturb the root.
        let propensity = if external_weight > 0.0 {
            rows.iter().map(|r| ctx.propensity.evaluate(&r.x)).collect()
        } else {
            vec![1.0; rows.len()]
        };
        Ok(ScoreEquation {
            rows,
            propensity,
            weights,
            total_weight,
            model: &ctx.model,
            variance: ctx.model.variance(),
            cutoff: ctx.cutoff,
        })
    }

    pub fn dim(&self) -> usize {
        self.rows[0].x.len()
    }

    /// `(1/Σw) Σ w_i S*_eff(obs_i, β)`.
    pub fn mean_score(&self, beta: &[f64]) -> Result<DVector<f64>> {
        let p = self.dim();
        let mut acc = vec![0.0; p];
        for (i, obs) in self.rows.iter().enumerate() {
            let w = self.weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            let eta = dot(&obs.x, beta);
            let k = w * score_factor(self.model, self.variance, self.cutoff, obs, eta, self.propensity[i])?;
            for (a, v) in acc.iter_mut().zip(&obs.x) {
                *a += k * v;
            }
        }
        Ok(DVector::from_iterator(p, acc.into_iter().map(|a| a / self.total_weight)))
    }

    /// Central-difference Jacobian with steps `1e-6·max(1, |β_j|)`.
    pub fn jacobian(&self, beta: &[f64]) -> Result<DMatrix<f64>> {
        let p = beta.len();
        let mut jac = DMatrix::zeros(p, p);
        let mut probe = beta.to_vec();
        for j in 0..p {
            let h = 1e-6 * beta[j].abs().max(1.0);
            probe[j] = beta[j] + h;
            let up = self.mean_score(&probe)?;
            probe[j] = beta[j] - h;
            let down = self.mean_score(&probe)?;
            probe[j] = beta[j];
            jac.set_column(j, &((up - down) / (2.0 * h)));
        }
        Ok(jac)
    }

    /// Damped Newton iteration from `init`.
    pub fn solve(&self, init: &DVector<f64>, opts: &SolverOptions) -> Result<(DVector<f64>, Diagnostics)> {
        if init.len() != self.dim() || init.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("initial value must be finite with one entry per covariate".into()));
        }
        let mut beta = init.clone();
        let mut score = self.mean_score(beta.as_slice())?;
        let mut diag = Diagnostics { iterations: 0, score_norm: score.amax(), damping_steps: 0 };
        for iter in 0..=opts.max_iter {
            diag.iterations = iter;
            diag.score_norm = score.amax();
            if diag.score_norm < opts.tol {
                return Ok((beta, diag));
            }
            if iter == opts.max_iter {
                break;
            }
            let jac = self.jacobian(beta.as_slice())?;
            let step = solve_checked(&jac, &(-&score), opts.max_condition, "efficient-score Jacobian")?;
            let current = score.norm();
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=opts.max_halvings {
                let trial = &beta + t * &step;
                if let Ok(s) = self.mean_score(trial.as_slice()) {
                    if s.norm() < current {
                        accepted = Some((trial, s));
                        break;
                    }
                }
                t *= 0.5;
                diag.damping_steps += 1;
            }
            match accepted {
                Some((b, s)) => {
                    beta = b;
                    score = s;
                }
                None => break,
            }
        }
        Err(Error::NonConvergence {
            iterations: diag.iterations,
            score_norm: score.amax(),
            last_iterate: beta.iter().copied().collect(),
        })
    }
}

/// Solves `(1/N) Σ S*_eff(β) = 0`. Without `init`, starts from the WLS fit.
pub fn eff_fit(
    data: &FusedDataset,
    ctx: &ScoreContext,
    init: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, Diagnostics)> {
    eff_fit_weighted(data, ctx, None, init, &SolverOptions::default())
}

/// [`eff_fit`] with multiplier weights scaling each observation's score.
pub fn eff_fit_weighted(
    data: &FusedDataset,
    ctx: &ScoreContext,
    weights: Option<&[f64]>,
    init: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, Diagnostics)> {
    let start = match init {
        Some(b) => b.clone(),
        None => wls_fit_weighted(data.rows(), weights, &ctx.model)?,
    };
    ScoreEquation::new(data, ctx, weights)?.solve(&start, opts)
}

/// Output of [`combine`].
#[derive(Debug, Clone)]
pub struct Combination {
    pub beta: DVector<f64>,
    pub w: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    /// Ridge added to `Var(d)` before inversion (zero when not needed).
    pub ridge: f64,
}

/// `β̂* = β_ls + W(β_eff - β_ls)` with `W = -Cov(β_ls, d) Var(d)⁻¹`,
/// `d = β_eff - β_ls`, and covariance `Var(β_ls) - Cov(β_ls,d) Var(d)⁻¹ Cov(β_ls,d)ᵀ`.
///
/// `Var(d)` gets a ridge of `1e-8·tr/p` when its condition number exceeds 1e10.
pub fn combine(
    beta_ls: &DVector<f64>,
    beta_eff: &DVector<f64>,
    cov_ls: &DMatrix<f64>,
    cov_d: &DMatrix<f64>,
    cov_ls_d: &DMatrix<f64>,
) -> Result<Combination> {
    let p = beta_ls.len();
    let square = |m: &DMatrix<f64>| m.nrows() == p && m.ncols() == p;
    if beta_eff.len() != p || !square(cov_ls) || !square(cov_d) || !square(cov_ls_d) {
        return Err(Error::Dimension(format!("combine expects {p}-vectors and {p}x{p} matrices")));
    }
    let trace = cov_d.trace();
    let mut ridge = 0.0;
    let inv = if trace > 0.0 {
        let mut reg = cov_d.clone();
        symmetrize(&mut reg);
        if condition_number(&reg) > 1e10 {
            ridge = 1e-8 * trace / p as f64;
            for i in 0..p {
                reg[(i, i)] += ridge;
            }
        }
        sym_pinv(&reg, 1e-15)
    } else {
        DMatrix::zeros(p, p)
    };
    let w = -(cov_ls_d * &inv);
    let beta = beta_ls + &w * (beta_eff - beta_ls);
    let mut covariance = cov_ls - cov_ls_d * &inv * cov_ls_d.transpose();
    symmetrize(&mut covariance);
    Ok(Combination { beta, w, covariance, ridge })
}

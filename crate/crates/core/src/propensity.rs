//! Models for `p(x) = P(R = 1 | X = x)`, the probability that a pooled row
//! comes from the target population.

use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::data::FusedDataset;
use crate::error::{Error, Result};
use crate::error_models::std_normal_pdf;
use crate::linalg::{condition_number, solve_checked};

/// Lower clamp for every propensity value; the upper clamp is `1 - PROB_CLAMP`.
pub const PROB_CLAMP: f64 = 1e-6;

const IRLS_MAX_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-8;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Marginal law of one covariate column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColumnLaw {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { min: f64, max: f64 },
}

impl ColumnLaw {
    fn density(&self, v: f64) -> f64 {
        match *self {
            ColumnLaw::Bernoulli { p } => {
                if v == 1.0 {
                    p
                } else if v == 0.0 {
                    1.0 - p
                } else {
                    0.0
                }
            }
            ColumnLaw::Normal { mean, sd } => std_normal_pdf((v - mean) / sd) / sd,
            ColumnLaw::Uniform { min, max } => {
                if (min..=max).contains(&v) {
                    1.0 / (max - min)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Plug-in density ratio `f_t(x)π / {f_t(x)π + f_e(x)(1-π)}` with independent
/// per-column marginals in each population.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatio {
    pub pi: f64,
    /// `(column index, law)` pairs for the target population.
    pub target: Vec<(usize, ColumnLaw)>,
    /// `(column index, law)` pairs for the external population.
    pub external: Vec<(usize, ColumnLaw)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropensityModel {
    Constant { pi: f64 },
    /// Coefficients over the full covariate vector (intercept first).
    Logistic { coef: Vec<f64> },
    DensityRatio(DensityRatio),
}

impl PropensityModel {
    /// `p̂(x)`, clamped to `[1e-6, 1 - 1e-6]`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let p = match self {
            PropensityModel::Constant { pi } => *pi,
            PropensityModel::Logistic { coef } => {
                sigmoid(coef.iter().zip(x).map(|(b, v)| b * v).sum())
            }
            PropensityModel::DensityRatio(dr) => {
                let ft: f64 = dr.target.iter().map(|(j, law)| law.density(x[*j])).product();
                let fe: f64 = dr.external.iter().map(|(j, law)| law.density(x[*j])).product();
                let num = ft * dr.pi;
                let den = num + fe * (1.0 - dr.pi);
                if den > 0.0 {
                    num / den
                } else {
                    dr.pi
                }
            }
        };
        clamp_prob(p)
    }
}

fn resolve_weights(data: &FusedDataset, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    match weights {
        None => Ok(vec![1.0; data.len()]),
        Some(w) => {
            if w.len() != data.len() {
                return Err(Error::Dimension(format!(
                    "{} weights for {} rows",
                    w.len(),
                    data.len()
                )));
            }
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::Data("weights must be finite and nonnegative".into()));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Data("weights are all zero".into()));
            }
            Ok(w.to_vec())
        }
    }
}

fn weighted_target_fraction(data: &FusedDataset, w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    let target: f64 = data.rows().iter().zip(w).map(|(r, wi)| r.r() * wi).sum();
    target / total
}

/// `p̂ ≡ π`, the (weighted) share of target rows.
pub fn fit_constant(data: &FusedDataset, weights: Option<&[f64]>) -> Result<PropensityModel> {
    let w = resolve_weights(data, weights)?;
    let pi = weighted_target_fraction(data, &w);
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pi) {
        warn!("target fraction {pi} is degenerate; clamping the constant propensity");
    }
    Ok(PropensityModel::Constant { pi: clamp_prob(pi) })
}

/// Result of a logistic IRLS fit, with the inverse Fisher information.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

/// Weighted logistic regression of `r` on `x` by iteratively reweighted
/// least squares.
pub fn logistic_irls(data: &FusedDataset, weights: Option<&[f64]>) -> Result<LogisticFit> {
    let w = resolve_weights(data, weights)?;
    let p = data.dim();
    let n = data.len();
    let x = DMatrix::from_fn(n, p, |i, j| data.rows()[i].x[j]);
    let r: Vec<f64> = data.rows().iter().map(|o| o.r()).collect();

    let mut gram = DMatrix::zeros(p, p);
    for i in 0..n {
        let xi = x.row(i);
        gram += w[i] * xi.transpose() * xi;
    }
    let condition = condition_number(&gram);
    if !(condition <= 1e12) {
        return Err(Error::Singular { what: "propensity design matrix", condition });
    }

    let separation = |coef: &DVector<f64>| {
        let j = (1..p)
            .max_by(|&a, &b| coef[a].abs().total_cmp(&coef[b].abs()))
            .unwrap_or(0);
        Error::Separation { covariate: data.names()[j].clone() }
    };

    let mut coef = DVector::zeros(p);
    let pi = weighted_target_fraction(data, &w);
    if pi > 0.0 && pi < 1.0 {
        coef[0] = (pi / (1.0 - pi)).ln();
    }
    for iter in 1..=IRLS_MAX_ITER {
        let eta = &x * &coef;
        let mut hess = DMatrix::zeros(p, p);
        let mut grad = DVector::zeros(p);
        let mut saturated = false;
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&mu) {
                saturated = true;
            }
            let xi = x.row(i).transpose();
            grad += (w[i] * (r[i] - mu)) * &xi;
            hess += (w[i] * mu * (1.0 - mu)) * &xi * xi.transpose();
        }
        let step = match solve_checked(&hess, &grad, 1e12, "propensity information matrix") {
            Ok(s) => s,
            Err(_) if saturated => return Err(separation(&coef)),
            Err(e) => return Err(e),
        };
        coef += &step;
        if step.amax() < IRLS_TOL {
            let covariance = hess
                .try_inverse()
                .ok_or(Error::Singular { what: "propensity information matrix", condition })?;
            return Ok(LogisticFit { coef: coef.iter().copied().collect(), covariance, iterations: iter });
        }
    }
    let eta = &x * &coef;
    if eta.iter().any(|e| !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&sigmoid(*e))) {
        return Err(separation(&coef));
    }
    Err(Error::NonConvergence {
        iterations: IRLS_MAX_ITER,
        score_norm: f64::NAN,
        last_iterate: coef.iter().copied().collect(),
    })
}

/// Logistic-classifier propensity. When every row comes from one source the
/// classifier is undefined; the intercept-only clamped model is returned with
/// a warning.
pub fn fit_logistic(data: &FusedDataset, weights: Option<&[f64]>) -> Result<PropensityModel> {
    let w = resolve_weights(data, weights)?;
    let has_target = data.rows().iter().zip(&w).any(|(r, wi)| r.is_target() && *wi > 0.0);
    let has_external = data.rows().iter().zip(&w).any(|(r, wi)| !r.is_target() && *wi > 0.0);
    if !(has_target && has_external) {
        warn!("only one data source carries weight; propensity clamped to a constant");
        let pi = clamp_prob(weighted_target_fraction(data, &w));
        let mut coef = vec![0.0; data.dim()];
        coef[0] = (pi / (1.0 - pi)).ln();
        return Ok(PropensityModel::Logistic { coef });
    }
    Ok(PropensityModel::Logistic { coef: logistic_irls(data, Some(&w))?.coef })
}

/// Which columns the density-ratio propensity treats as binary and continuous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRoles {
    pub binary: Vec<usize>,
    pub continuous: Vec<usize>,
}

impl ColumnRoles {
    /// Columns taking only values in {0, 1} are binary; every other non-intercept
    /// column is continuous.
    pub fn detect(data: &FusedDataset) -> Self {
        let mut binary = Vec::new();
        let mut continuous = Vec::new();
        for j in 1..data.dim() {
            if data.rows().iter().all(|r| r.x[j] == 0.0 || r.x[j] == 1.0) {
                binary.push(j);
            } else {
                continuous.push(j);
            }
        }
        ColumnRoles { binary, continuous }
    }
}

struct WeightedColumn {
    sum_w: f64,
    count: usize,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

fn column_stats<'a>(values: impl Iterator<Item = (f64, f64)> + 'a) -> WeightedColumn {
    let mut s = WeightedColumn {
        sum_w: 0.0,
        count: 0,
        mean: 0.0,
        m2: 0.0,
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };
    let pairs: Vec<(f64, f64)> = values.filter(|(_, w)| *w > 0.0).collect();
    for &(v, w) in &pairs {
        s.sum_w += w;
        s.count += 1;
        s.min = s.min.min(v);
        s.max = s.max.max(v);
    }
    if s.sum_w > 0.0 {
        s.mean = pairs.iter().map(|(v, w)| v * w).sum::<f64>() / s.sum_w;
        s.m2 = pairs.iter().map(|(v, w)| w * (v - s.mean).powi(2)).sum::<f64>();
    }
    s
}

impl WeightedColumn {
    // Frequency-weight sample sd; equals the usual n - 1 estimator for unit weights.
    fn sd(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2 / self.sum_w * n / (n - 1.0)).sqrt()
    }
}

/// The two-population plug-in density ratio: target columns are
/// Bernoulli(mean) / Normal(mean, sd), external columns Bernoulli(mean) /
/// Uniform(min, max), with π the (weighted) target share.
pub fn fit_density_ratio(
    data: &FusedDataset,
    weights: Option<&[f64]>,
    roles: &ColumnRoles,
) -> Result<PropensityModel> {
    let w = resolve_weights(data, weights)?;
    let pi = weighted_target_fraction(data, &w);
    let mut target = Vec::new();
    let mut external = Vec::new();
    let stats = |j: usize, want_target: bool| {
        column_stats(
            data.rows()
                .iter()
                .zip(&w)
                .filter(move |(r, _)| r.is_target() == want_target)
                .map(move |(r, wi)| (r.x[j], *wi)),
        )
    };
    for &j in &roles.binary {
        let t = stats(j, true);
        let e = stats(j, false);
        if t.sum_w <= 0.0 || e.sum_w <= 0.0 {
            return Err(Error::Degenerate(format!(
                "column '{}' has no rows in one population",
                data.names()[j]
            )));
        }
        target.push((j, ColumnLaw::Bernoulli { p: t.mean }));
        external.push((j, ColumnLaw::Bernoulli { p: e.mean }));
    }
    for &j in &roles.continuous {
        let t = stats(j, true);
        let e = stats(j, false);
        let sd = t.sd();
        if !(sd > 0.0) {
            return Err(Error::Degenerate(format!(
                "target column '{}' has zero standard deviation",
                data.names()[j]
            )));
        }
        if !(e.max > e.min) {
            return Err(Error::Degenerate(format!(
                "external column '{}' has a degenerate uniform range",
                data.names()[j]
            )));
        }
        target.push((j, ColumnLaw::Normal { mean: t.mean, sd }));
        external.push((j, ColumnLaw::Uniform { min: e.min, max: e.max }));
    }
    Ok(PropensityModel::DensityRatio(DensityRatio { pi, target, external }))
}

/// How the propensity is estimated (and re-estimated inside the bootstrap).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropensityStrategy {
    Constant,
    Logistic,
    /// Plug-in density ratio; `None` detects binary columns from the data.
    DensityRatio(Option<ColumnRoles>),
}

impl PropensityStrategy {
    pub fn fit(&self, data: &FusedDataset, weights: Option<&[f64]>) -> Result<PropensityModel> {
        match self {
            PropensityStrategy::Constant => fit_constant(data, weights),
            PropensityStrategy::Logistic => fit_logistic(data, weights),
            PropensityStrategy::DensityRatio(Some(roles)) => fit_density_ratio(data, weights, roles),
            PropensityStrategy::DensityRatio(None) => {
                fit_density_ratio(data, weights, &ColumnRoles::detect(data))
            }
        }
    }
}

impl FromStr for PropensityStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(PropensityStrategy::Constant),
            "logistic" => Ok(PropensityStrategy::Logistic),
            "sim2-ratio" => Ok(PropensityStrategy::DensityRatio(None)),
            other => Err(Error::Config(format!(
                "unknown propensity strategy '{other}' (expected constant, logistic, sim2-ratio)"
            ))),
        }
    }
}

impl std::fmt::Display for PropensityStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PropensityStrategy::Constant => "constant",
            PropensityStrategy::Logistic => "logistic",
            PropensityStrategy::DensityRatio(_) => "sim2-ratio",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    fn toy(n_target: usize, n_external: usize) -> FusedDataset {
        let mut rows = Vec::new();
        for i in 0..n_target {
            rows.push(Observation::target(i as f64, vec![1.0, (i % 2) as f64, i as f64 * 0.1]));
        }
        for i in 0..n_external {
            rows.push(Observation::external(i % 3 == 0, vec![1.0, (i % 2) as f64, i as f64 * 0.2]));
        }
        FusedDataset::unnamed(rows).unwrap()
    }

    #[test]
    fn constant_is_target_share() {
        let d = toy(500, 500);
        assert_eq!(fit_constant(&d, None).unwrap(), PropensityModel::Constant { pi: 0.5 });
        let twos = vec![2.0; d.len()];
        assert_eq!(fit_constant(&d, Some(&twos)).unwrap(), PropensityModel::Constant { pi: 0.5 });
        let m = fit_constant(&d, None).unwrap();
        assert_eq!(m.evaluate(&[1.0, 0.0, 3.0]), m.evaluate(&[1.0, 1.0, -7.0]));
    }

    #[test]
    fn degenerate_constant_is_clamped() {
        let d = toy(10, 0);
        let PropensityModel::Constant { pi } = fit_constant(&d, None).unwrap() else { panic!() };
        assert_eq!(pi, 1.0 - PROB_CLAMP);
    }

    #[test]
    fn constant_errors() {
        let d = toy(3, 3);
        assert!(fit_constant(&d, Some(&[0.0; 6])).is_err());
        assert!(fit_constant(&d, Some(&[1.0; 5])).is_err());
        let empty = FusedDataset::unnamed(vec![]).unwrap();
        assert!(fit_constant(&empty, None).is_err());
    }

    #[test]
    fn balanced_duplicates_give_zero_coefficients() {
        let mut rows = Vec::new();
        for i in 0..20 {
            let x = vec![1.0, (i % 2) as f64, (i as f64).sin()];
            rows.push(Observation::target(0.0, x.clone()));
            rows.push(Observation::external(true, x));
        }
        let d = FusedDataset::unnamed(rows).unwrap();
        let fit = logistic_irls(&d, None).unwrap();
        for c in &fit.coef {
            assert!(c.abs() < 1e-10, "{c}");
        }
        let doubled = vec![2.0; d.len()];
        let fit2 = logistic_irls(&d, Some(&doubled)).unwrap();
        for (a, b) in fit.coef.iter().zip(&fit2.coef) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_separation_is_reported() {
        let mut rows = Vec::new();
        for i in 0..20 {
            rows.push(Observation::target(0.0, vec![1.0, 1.0 + i as f64]));
            rows.push(Observation::external(true, vec![1.0, -1.0 - i as f64]));
        }
        let d = FusedDataset::new(vec!["Intercept".into(), "age".into()], rows).unwrap();
        match logistic_irls(&d, None) {
            Err(Error::Separation { covariate }) => assert_eq!(covariate, "age"),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let rows = (0..10)
            .map(|i| {
                let v = i as f64;
                if i % 2 == 0 {
                    Observation::target(0.0, vec![1.0, v, 2.0 * v])
                } else {
                    Observation::external(false, vec![1.0, v, 2.0 * v])
                }
            })
            .collect();
        let d = FusedDataset::unnamed(rows).unwrap();
        assert!(matches!(logistic_irls(&d, None), Err(Error::Singular { .. })));
    }

    #[test]
    fn density_ratio_collapses_when_laws_match() {
        let dr = DensityRatio {
            pi: 0.4,
            target: vec![(1, ColumnLaw::Bernoulli { p: 0.3 })],
            external: vec![(1, ColumnLaw::Bernoulli { p: 0.3 })],
        };
        let m = PropensityModel::DensityRatio(dr);
        for x1 in [0.0, 1.0] {
            assert!((m.evaluate(&[1.0, x1]) - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn density_ratio_outside_uniform_support_clamps() {
        let dr = DensityRatio {
            pi: 0.5,
            target: vec![(1, ColumnLaw::Normal { mean: 0.0, sd: 1.0 })],
            external: vec![(1, ColumnLaw::Uniform { min: -2.0, max: 2.0 })],
        };
        let m = PropensityModel::DensityRatio(dr);
        assert_eq!(m.evaluate(&[1.0, 3.0]), 1.0 - PROB_CLAMP);
        assert!(m.evaluate(&[1.0, 0.0]) < 1.0 - PROB_CLAMP);
    }

    #[test]
    fn density_ratio_errors() {
        let rows = vec![
            Observation::target(0.0, vec![1.0, 2.0]),
            Observation::target(0.0, vec![1.0, 2.0]),
            Observation::external(true, vec![1.0, 0.0]),
            Observation::external(true, vec![1.0, 1.0]),
        ];
        let d = FusedDataset::unnamed(rows).unwrap();
        let roles = ColumnRoles { binary: vec![], continuous: vec![1] };
        assert!(matches!(fit_density_ratio(&d, None, &roles), Err(Error::Degenerate(_))));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("constant".parse::<PropensityStrategy>().unwrap(), PropensityStrategy::Constant);
        assert_eq!("logistic".parse::<PropensityStrategy>().unwrap(), PropensityStrategy::Logistic);
        assert_eq!(
            "sim2-ratio".parse::<PropensityStrategy>().unwrap(),
            PropensityStrategy::DensityRatio(None)
        );
        assert!("forest".parse::<PropensityStrategy>().is_err());
    }
}

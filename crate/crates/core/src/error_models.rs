//! Zero-mean error distributions used both as data-generating laws and as
//! working models inside the estimating equations.
//!
//! Every model exposes the four functionals the estimators need: the CDF
//! `F*(t)`, the density, the variance `v*`, and the partial first moment
//! `m1(a) = ∫_{-∞}^a t f*(t) dt`, which equals `E*(Zε | x)` at `a = c - βᵀx`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn std_normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Standard normal CDF `Φ(t)`.
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Φ(t)`, accurate in the upper tail.
pub fn std_normal_sf(t: f64) -> f64 {
    0.5 * erfc(t * FRAC_1_SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)`; infinite at 0 and 1.
///
/// The series inverse is only good to about 1e-11, so two Halley steps
/// against the CDF bring it to working precision.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut q = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let d = std_normal_pdf(q);
        if d == 0.0 {
            break;
        }
        let u = (std_normal_cdf(q) - p) / d;
        q -= u / (1.0 + 0.5 * q * u);
    }
    q
}

// (Φ(t), 1 - Φ(t)) with a single erfc call; the small side is computed directly.
fn normal_pair(t: f64) -> (f64, f64) {
    if t < 0.0 {
        let c = std_normal_cdf(t);
        (c, 1.0 - c)
    } else {
        let s = std_normal_sf(t);
        (1.0 - s, s)
    }
}

/// Working-model quantities at `a = c - βᵀx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functionals {
    pub cdf: f64,
    pub sf: f64,
    pub m1: f64,
}

/// One Gaussian component of a mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// A posited (or true) error law `f*`. Working models here are x-free.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorModel {
    StandardNormal,
    StandardLogistic,
    GaussianMixture(Vec<MixtureComponent>),
}

/// Builds a Gaussian mixture from `(weight, mean, sd)` triples.
///
/// Weights summing to a positive constant within 1e-6 of one are
/// renormalized. With `recenter` set, every mean is shifted by the mixture
/// mean so the result has mean exactly zero; otherwise a mean larger than
/// 1e-10 in absolute value is rejected.
pub fn make_gaussian_mixture(components: &[(f64, f64, f64)], recenter: bool) -> Result<ErrorModel> {
    if components.is_empty() {
        return Err(Error::InvalidModel("mixture needs at least one component".into()));
    }
    for &(w, mu, sd) in components {
        if !(w.is_finite() && mu.is_finite() && sd.is_finite()) {
            return Err(Error::InvalidModel("non-finite mixture parameter".into()));
        }
        if w <= 0.0 {
            return Err(Error::InvalidModel(format!("mixture weight {w} is not positive")));
        }
        if sd <= 0.0 {
            return Err(Error::InvalidModel(format!("mixture sd {sd} is not positive")));
        }
    }
    let total: f64 = components.iter().map(|c| c.0).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidModel(format!("mixture weights sum to {total}, expected 1")));
    }
    let mut comps: Vec<MixtureComponent> = components
        .iter()
        .map(|&(weight, mean, sd)| MixtureComponent { weight: weight / total, mean, sd })
        .collect();
    let mean: f64 = comps.iter().map(|c| c.weight * c.mean).sum();
    if recenter {
        for c in &mut comps {
            c.mean -= mean;
        }
    } else if mean.abs() > 1e-10 {
        return Err(Error::InvalidModel(format!(
            "mixture mean is {mean}, not zero (use recentering)"
        )));
    }
    Ok(ErrorModel::GaussianMixture(comps))
}

fn logistic_cdf(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^t) without overflow
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl ErrorModel {
    /// The error law of the first simulation design: the printed density
    /// `0.4φ{(ε-8)/2} + 0.2φ(ε+2)` (weights 0.8 / 0.2, mean 6), recentered
    /// to mean zero.
    pub fn sim1_mixture() -> Self {
        make_gaussian_mixture(&[(0.8, 8.0, 2.0), (0.2, -2.0, 1.0)], true)
            .expect("sim1 mixture parameters are valid")
    }

    /// The error law of the second simulation design,
    /// `0.9/1.1 φ{(ε-0.2)/1.1} + 0.1 φ(ε+1.8)`, which is exactly mean zero.
    pub fn sim2_mixture() -> Self {
        make_gaussian_mixture(&[(0.9, 0.2, 1.1), (0.1, -1.8, 1.0)], false)
            .expect("sim2 mixture parameters are valid")
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            ErrorModel::StandardNormal => std_normal_cdf(t),
            ErrorModel::StandardLogistic => logistic_cdf(t),
            ErrorModel::GaussianMixture(comps) => comps
                .iter()
                .map(|c| c.weight * std_normal_cdf((t - c.mean) / c.sd))
                .sum::<f64>()
                .clamp(0.0, 1.0),
        }
    }

    /// `1 - cdf(t)`, computed without cancellation in the upper tail.
    pub fn sf(&self, t: f64) -> f64 {
        match self {
            ErrorModel::StandardNormal => std_normal_sf(t),
            ErrorModel::StandardLogistic => logistic_cdf(-t),
            ErrorModel::GaussianMixture(comps) => comps
                .iter()
                .map(|c| c.weight * std_normal_sf((t - c.mean) / c.sd))
                .sum::<f64>()
                .clamp(0.0, 1.0),
        }
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match self {
            ErrorModel::StandardNormal => std_normal_pdf(t),
            ErrorModel::StandardLogistic => {
                let s = logistic_cdf(t);
                s * (1.0 - s)
            }
            ErrorModel::GaussianMixture(comps) => comps
                .iter()
                .map(|c| c.weight * std_normal_pdf((t - c.mean) / c.sd) / c.sd)
                .sum(),
        }
    }

    /// `v* = ∫ t² f*(t) dt`.
    pub fn variance(&self) -> f64 {
        match self {
            ErrorModel::StandardNormal => 1.0,
            ErrorModel::StandardLogistic => PI * PI / 3.0,
            ErrorModel::GaussianMixture(comps) => comps
                .iter()
                .map(|c| c.weight * (c.sd * c.sd + c.mean * c.mean))
                .sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ErrorModel::StandardNormal | ErrorModel::StandardLogistic => 0.0,
            ErrorModel::GaussianMixture(comps) => comps.iter().map(|c| c.weight * c.mean).sum(),
        }
    }

    /// `m1(a) = ∫_{-∞}^a t f*(t) dt`. Zero at both infinities.
    pub fn partial_first_moment(&self, a: f64) -> f64 {
        if a.is_infinite() {
            return 0.0;
        }
        match self {
            ErrorModel::StandardNormal => -std_normal_pdf(a),
            ErrorModel::StandardLogistic => {
                // a·σ(a) - log(1 + e^a); rewritten per sign to avoid cancellation.
                if a > 0.0 {
                    -a * logistic_cdf(-a) - (-a).exp().ln_1p()
                } else {
                    a * logistic_cdf(a) - softplus(a)
                }
            }
            ErrorModel::GaussianMixture(comps) => {
                if a <= 0.0 {
                    comps
                        .iter()
                        .map(|c| {
                            let u = (a - c.mean) / c.sd;
                            c.weight * (c.mean * std_normal_cdf(u) - c.sd * std_normal_pdf(u))
                        })
                        .sum()
                } else {
                    // Upper-tail form: m1(a) = -∫_a^∞ t f(t) dt (zero mean).
                    -comps
                        .iter()
                        .map(|c| {
                            let u = (a - c.mean) / c.sd;
                            c.weight * (c.mean * std_normal_sf(u) + c.sd * std_normal_pdf(u))
                        })
                        .sum::<f64>()
                }
            }
        }
    }

    /// `F*(a)`, `1 - F*(a)` and `m1(a)` in one pass, each accurate in its tail.
    /// This is the hot path of the score evaluation.
    pub fn functionals(&self, a: f64) -> Functionals {
        match self {
            ErrorModel::StandardNormal => {
                let (cdf, sf) = normal_pair(a);
                Functionals { cdf, sf, m1: -std_normal_pdf(a) }
            }
            ErrorModel::StandardLogistic => Functionals {
                cdf: logistic_cdf(a),
                sf: logistic_cdf(-a),
                m1: self.partial_first_moment(a),
            },
            ErrorModel::GaussianMixture(comps) => {
                let mut cdf = 0.0;
                let mut sf = 0.0;
                let mut lower = 0.0;
                let mut upper = 0.0;
                for c in comps {
                    let u = (a - c.mean) / c.sd;
                    let (pc, ps) = normal_pair(u);
                    let dens = c.sd * std_normal_pdf(u);
                    cdf += c.weight * pc;
                    sf += c.weight * ps;
                    lower += c.weight * (c.mean * pc - dens);
                    upper += c.weight * (c.mean * ps + dens);
                }
                let m1 = if a <= 0.0 { lower } else { -upper };
                Functionals { cdf: cdf.clamp(0.0, 1.0), sf: sf.clamp(0.0, 1.0), m1 }
            }
        }
    }

    /// Draws one error value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ErrorModel::StandardNormal => StandardNormal.sample(rng),
            ErrorModel::StandardLogistic => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
            ErrorModel::GaussianMixture(comps) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = comps[comps.len() - 1];
                for c in comps {
                    acc += c.weight;
                    if u < acc {
                        chosen = *c;
                        break;
                    }
                }
                let z: f64 = StandardNormal.sample(rng);
                chosen.mean + chosen.sd * z
            }
        }
    }
}

impl FromStr for ErrorModel {
    type Err = Error;

    /// Parses `normal`, `logistic`, or `mix:w1,mu1,sd1;w2,mu2,sd2;...`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "normal" => return Ok(ErrorModel::StandardNormal),
            "logistic" => return Ok(ErrorModel::StandardLogistic),
            _ => {}
        }
        let body = s
            .strip_prefix("mix:")
            .ok_or_else(|| Error::InvalidModel(format!("unknown error model '{s}'")))?;
        let mut comps = Vec::new();
        for part in body.split(';').filter(|p| !p.trim().is_empty()) {
            let nums: Vec<f64> = part
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidModel(format!("bad number '{v}' in '{s}'")))
                })
                .collect::<Result<_>>()?;
            if nums.len() != 3 {
                return Err(Error::InvalidModel(format!(
                    "mixture component '{part}' needs weight,mean,sd"
                )));
            }
            comps.push((nums[0], nums[1], nums[2]));
        }
        make_gaussian_mixture(&comps, false)
    }
}

impl fmt::Display for ErrorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorModel::StandardNormal => write!(f, "normal"),
            ErrorModel::StandardLogistic => write!(f, "logistic"),
            ErrorModel::GaussianMixture(comps) => {
                write!(f, "mix:")?;
                for (i, c) in comps.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{},{},{}", c.weight, c.mean, c.sd)?;
                }
                Ok(())
            }
        }
    }
}

/// The conditional law `G(t, x) = Φ(t·s(x))` that, paired with alternate
/// coefficients `α`, reproduces exactly the external-data distribution of
/// `(F, β)`: `G(c - αᵀx, x) = F(c - βᵀx)`.
///
/// `G(·, x)` is only a proper (nondecreasing) CDF where `s(x) > 0`.
#[derive(Debug, Clone)]
pub struct ReparameterizedModel {
    base: ErrorModel,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    cutoff: f64,
}

/// Constructs the reparameterized model; `alpha` must differ from `beta`.
pub fn unidentifiable_reparam(
    base: ErrorModel,
    beta: &[f64],
    alpha: &[f64],
    cutoff: f64,
) -> Result<ReparameterizedModel> {
    if beta.len() != alpha.len() {
        return Err(Error::Dimension(format!(
            "beta has length {}, alpha has length {}",
            beta.len(),
            alpha.len()
        )));
    }
    if beta == alpha {
        return Err(Error::Degenerate("alpha must differ from beta".into()));
    }
    Ok(ReparameterizedModel {
        base,
        beta: beta.to_vec(),
        alpha: alpha.to_vec(),
        cutoff,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ReparameterizedModel {
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn base(&self) -> &ErrorModel {
        &self.base
    }

    /// `s(x) = Φ⁻¹{F(c - βᵀx)} / (c - αᵀx)`.
    pub fn scale(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.alpha.len() {
            return Err(Error::Dimension(format!(
                "x has length {}, expected {}",
                x.len(),
                self.alpha.len()
            )));
        }
        let denom = self.cutoff - dot(&self.alpha, x);
        if denom == 0.0 {
            return Err(Error::Degenerate("alphaᵀx equals the cutoff; s(x) undefined".into()));
        }
        let f = self.base.cdf(self.cutoff - dot(&self.beta, x));
        if f <= 0.0 || f >= 1.0 {
            return Err(Error::Degenerate(format!(
                "F(c - betaᵀx) = {f} is saturated; quantile undefined"
            )));
        }
        Ok(std_normal_quantile(f) / denom)
    }

    /// `G(t, x)`.
    pub fn cdf(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(std_normal_cdf(t * self.scale(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_at_zero() {
        assert_eq!(ErrorModel::StandardNormal.cdf(0.0), 0.5);
        assert_eq!(ErrorModel::StandardLogistic.cdf(0.0), 0.5);
        assert!((ErrorModel::StandardNormal.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((ErrorModel::StandardLogistic.pdf(0.0) - 0.25).abs() < 1e-15);
        assert!((ErrorModel::StandardNormal.partial_first_moment(0.0) + 0.398_942_3).abs() < 1e-7);
        assert!(
            (ErrorModel::StandardLogistic.partial_first_moment(0.0) + std::f64::consts::LN_2).abs()
                < 1e-15
        );
        assert_eq!(ErrorModel::StandardNormal.variance(), 1.0);
    }

    #[test]
    fn moments_vanish_at_infinity() {
        for m in [
            ErrorModel::StandardNormal,
            ErrorModel::StandardLogistic,
            ErrorModel::sim2_mixture(),
        ] {
            assert_eq!(m.partial_first_moment(f64::INFINITY), 0.0);
            assert_eq!(m.partial_first_moment(f64::NEG_INFINITY), 0.0);
            assert!(m.partial_first_moment(60.0).abs() < 1e-20);
            assert!(m.partial_first_moment(-60.0).abs() < 1e-20);
        }
    }

    #[test]
    fn sim2_mixture_is_mean_zero_with_known_variance() {
        let m = ErrorModel::sim2_mixture();
        assert!(m.mean().abs() < 1e-12);
        assert!((m.variance() - 1.549).abs() < 1e-12);
    }

    #[test]
    fn recentering_shifts_means() {
        let m = make_gaussian_mixture(&[(0.8, 8.0, 2.0), (0.2, -2.0, 1.0)], true).unwrap();
        let ErrorModel::GaussianMixture(c) = &m else { panic!() };
        assert!((c[0].mean - 2.0).abs() < 1e-12);
        assert!((c[1].mean + 8.0).abs() < 1e-12);
        assert!(m.mean().abs() <= 1e-12);
    }

    #[test]
    fn mixture_construction_errors() {
        assert!(make_gaussian_mixture(&[(1.0, 0.0, 0.0)], false).is_err());
        assert!(make_gaussian_mixture(&[(0.5, 0.0, 1.0)], false).is_err());
        assert!(make_gaussian_mixture(&[(0.8, 8.0, 2.0), (0.2, -2.0, 1.0)], false).is_err());
        // Sum within 1e-6 of one is renormalized.
        let m = make_gaussian_mixture(&[(0.5000004, 0.0, 1.0), (0.5, 0.0, 2.0)], false).unwrap();
        let ErrorModel::GaussianMixture(c) = &m else { panic!() };
        assert!((c[0].weight + c[1].weight - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_standard_component_matches_normal() {
        let m = make_gaussian_mixture(&[(1.0, 0.0, 1.0)], false).unwrap();
        for t in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            let n = ErrorModel::StandardNormal;
            assert!((m.cdf(t) - n.cdf(t)).abs() < 1e-15);
            assert!((m.pdf(t) - n.pdf(t)).abs() < 1e-15);
            assert!((m.partial_first_moment(t) - n.partial_first_moment(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn parse_and_display() {
        let m: ErrorModel = "mix:0.9,0.2,1.1;0.1,-1.8,1".parse().unwrap();
        assert_eq!(m, ErrorModel::sim2_mixture());
        assert_eq!("Normal".parse::<ErrorModel>().unwrap(), ErrorModel::StandardNormal);
        assert_eq!("logistic".parse::<ErrorModel>().unwrap(), ErrorModel::StandardLogistic);
        assert!("cauchy".parse::<ErrorModel>().is_err());
        assert!("mix:1,2".parse::<ErrorModel>().is_err());
        let again: ErrorModel = m.to_string().parse().unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn reparam_matches_base_at_alternate_point() {
        let beta = [0.0, 1.0, -1.0];
        let alpha = [0.3, 0.5, -2.0];
        let g = unidentifiable_reparam(ErrorModel::sim2_mixture(), &beta, &alpha, 0.0).unwrap();
        let x = [1.0, 1.0, 0.7];
        let a_alpha = -dot(&alpha, &x);
        let lhs = g.cdf(a_alpha, &x).unwrap();
        let rhs = ErrorModel::sim2_mixture().cdf(-dot(&beta, &x));
        assert!((lhs - rhs).abs() < 1e-14);
        assert_eq!(g.cdf(0.0, &x).unwrap(), 0.5);
    }

    #[test]
    fn reparam_errors() {
        let beta = [0.0, 1.0];
        assert!(unidentifiable_reparam(ErrorModel::StandardNormal, &beta, &beta, 0.0).is_err());
        let g = unidentifiable_reparam(ErrorModel::StandardNormal, &beta, &[1.0, 1.0], 2.0).unwrap();
        // alphaᵀx = c
        assert!(matches!(g.cdf(0.3, &[1.0, 1.0]), Err(Error::Degenerate(_))));
        // F saturated
        let g = unidentifiable_reparam(ErrorModel::StandardNormal, &[100.0, 0.0], &[0.0, 0.0], 1.0)
            .unwrap();
        assert!(matches!(g.scale(&[1.0, 0.0]), Err(Error::Degenerate(_))));
    }
}

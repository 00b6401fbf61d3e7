//! Pooled target + external observations.

use crate::error::{Error, Result};

/// What was observed for a row: the continuous outcome for target rows, the
/// dichotomized indicator `z = I(y ≤ c)` for external rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Target(f64),
    External(bool),
}

/// One pooled row. `x[0]` is the intercept and always equals one.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub outcome: Outcome,
    pub x: Vec<f64>,
}

impl Observation {
    pub fn target(y: f64, x: Vec<f64>) -> Self {
        Observation { outcome: Outcome::Target(y), x }
    }

    pub fn external(z: bool, x: Vec<f64>) -> Self {
        Observation { outcome: Outcome::External(z), x }
    }

    pub fn is_target(&self) -> bool {
        matches!(self.outcome, Outcome::Target(_))
    }

    /// Source flag `r`.
    pub fn r(&self) -> f64 {
        if self.is_target() {
            1.0
        } else {
            0.0
        }
    }

    pub fn y(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Target(y) => Some(y),
            Outcome::External(_) => None,
        }
    }

    /// The dichotomized outcome; computed as `I(y ≤ c)` for target rows.
    pub fn z(&self, cutoff: f64) -> bool {
        match self.outcome {
            Outcome::Target(y) => y <= cutoff,
            Outcome::External(z) => z,
        }
    }
}

/// A pooled sample with named covariate columns (including the intercept).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedDataset {
    names: Vec<String>,
    rows: Vec<Observation>,
}

impl FusedDataset {
    /// Validates that every row has `names.len()` covariates with a leading one.
    pub fn new(names: Vec<String>, rows: Vec<Observation>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Data("dataset needs at least the intercept column".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.x.len() != names.len() {
                return Err(Error::Data(format!(
                    "row {i}: {} covariates, expected {}",
                    row.x.len(),
                    names.len()
                )));
            }
            if row.x[0] != 1.0 {
                return Err(Error::Data(format!("row {i}: intercept entry is {}", row.x[0])));
            }
            if row.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {i}: non-finite covariate")));
            }
            if let Outcome::Target(y) = row.outcome {
                if !y.is_finite() {
                    return Err(Error::Data(format!("row {i}: non-finite outcome")));
                }
            }
        }
        Ok(FusedDataset { names, rows })
    }

    /// Uses `x0, x1, ...` as covariate names after the intercept.
    pub fn unnamed(rows: Vec<Observation>) -> Result<Self> {
        let p = rows.first().map(|r| r.x.len()).unwrap_or(1);
        let names = std::iter::once("Intercept".to_string())
            .chain((1..p).map(|j| format!("x{j}")))
            .collect();
        Self::new(names, rows)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_target(&self) -> usize {
        self.rows.iter().filter(|r| r.is_target()).count()
    }

    pub fn n_external(&self) -> usize {
        self.len() - self.n_target()
    }

    pub fn target_rows(&self) -> impl Iterator<Item = &Observation> {
        self.rows.iter().filter(|r| r.is_target())
    }
}

//! Covariate cleaning: categorical validity checks, log transforms, pooled
//! standardization, and a single-pass extreme-value exclusion.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{FusedDataset, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessOptions {
    /// Allowed codes per categorical column; rows with other values are dropped.
    pub categorical: BTreeMap<String, Vec<f64>>,
    /// Columns to replace by their natural log (values must be positive).
    pub log_transform: Vec<String>,
    /// Standardize the continuous (non 0/1) covariates on the pooled sample.
    pub standardize: bool,
    /// Drop rows with any standardized covariate beyond this many sds;
    /// `None` disables the rule. Only applied together with `standardize`.
    pub sd_threshold: Option<f64>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            categorical: BTreeMap::new(),
            log_transform: Vec::new(),
            standardize: true,
            sd_threshold: Some(4.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnTransform {
    pub name: String,
    pub log: bool,
    /// Pooled mean and sd used for the first standardization.
    pub mean: f64,
    pub sd: f64,
    /// Mean and sd of the retained rows used for the final standardization.
    pub final_mean: f64,
    pub final_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessReport {
    pub rows_read: usize,
    /// `(rule, rows excluded)` in application order.
    pub excluded: Vec<(String, usize)>,
    pub columns: Vec<ColumnTransform>,
    pub final_rows: usize,
}

impl PreprocessReport {
    pub fn unchanged(rows: usize) -> Self {
        PreprocessReport { rows_read: rows, excluded: Vec::new(), columns: Vec::new(), final_rows: rows }
    }

    pub fn total_excluded(&self) -> usize {
        self.excluded.iter().map(|(_, n)| n).sum()
    }
}

fn column_index(data: &FusedDataset, name: &str) -> Result<usize> {
    data.names()
        .iter()
        .skip(1)
        .position(|n| n == name)
        .map(|i| i + 1)
        .ok_or_else(|| Error::Data(format!("preprocess: unknown covariate column '{name}'")))
}

fn mean_sd(rows: &[Observation], j: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.x[j]).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.x[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn standardize(rows: &mut [Observation], j: usize, name: &str) -> Result<(f64, f64)> {
    let (mean, sd) = mean_sd(rows, j);
    if !(sd > 0.0) || rows.len() < 2 {
        return Err(Error::Data(format!("preprocess: column '{name}' has zero standard deviation")));
    }
    for r in rows.iter_mut() {
        r.x[j] = (r.x[j] - mean) / sd;
    }
    Ok((mean, sd))
}

/// Applies, in order: categorical validity exclusions, log transforms,
/// pooled standardization of continuous covariates, exclusion of rows with any
/// standardized covariate beyond the threshold, and re-standardization of the
/// retained rows.
pub fn preprocess(data: &FusedDataset, opts: &PreprocessOptions) -> Result<(FusedDataset, PreprocessReport)> {
    let rows_read = data.len();
    let names = data.names().to_vec();
    let mut rows: Vec<Observation> = data.rows().to_vec();
    let mut excluded = Vec::new();

    // 1. categorical codes
    for (name, codes) in &opts.categorical {
        let j = column_index(data, name)?;
        let before = rows.len();
        rows.retain(|r| codes.contains(&r.x[j]));
        excluded.push((format!("invalid code in '{name}'"), before - rows.len()));
    }

    // 2. log transform
    let mut logged = vec![false; names.len()];
    for name in &opts.log_transform {
        let j = column_index(data, name)?;
        for (i, r) in rows.iter_mut().enumerate() {
            if !(r.x[j] > 0.0) {
                return Err(Error::Data(format!(
                    "preprocess: row {}, column '{name}': log of nonpositive value {}",
                    i + 1,
                    r.x[j]
                )));
            }
            r.x[j] = r.x[j].ln();
        }
        logged[j] = true;
    }

    let mut columns = Vec::new();
    if opts.standardize && !rows.is_empty() {
        let continuous: Vec<usize> = (1..names.len())
            .filter(|&j| !rows.iter().all(|r| r.x[j] == 0.0 || r.x[j] == 1.0))
            .collect();

        // 3. pooled standardization
        let mut first = Vec::new();
        for &j in &continuous {
            first.push(standardize(&mut rows, j, &names[j])?);
        }

        // 4. single-pass extreme-value exclusion
        if let Some(t) = opts.sd_threshold {
            let before = rows.len();
            rows.retain(|r| continuous.iter().all(|&j| r.x[j].abs() <= t));
            excluded.push((format!("covariate beyond {t} sd"), before - rows.len()));
        }

        // 5. re-standardize retained rows
        for (k, &j) in continuous.iter().enumerate() {
            let (final_mean, final_sd) = standardize(&mut rows, j, &names[j])?;
            columns.push(ColumnTransform {
                name: names[j].clone(),
                log: logged[j],
                mean: first[k].0,
                sd: first[k].1,
                final_mean,
                final_sd,
            });
        }
    }

    let final_rows = rows.len();
    let out = FusedDataset::new(names, rows)?;
    Ok((out, PreprocessReport { rows_read, excluded, columns, final_rows }))
}

//! CSV ingestion into a [`FusedDataset`].
//!
//! Cells are UTF-8 with `.` as decimal separator; an empty cell is missing.
//! Row numbers in error messages count data rows from 1 (the header is row 0).

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::{FusedDataset, Observation};
use crate::error::{Error, Result};
use crate::io::preprocess::PreprocessReport;
use crate::rng::{substream, StreamTag};

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq)]
pub struct Roles {
    /// Source flag column (1 = target, 0 = external); pooled files only.
    pub source: String,
    pub outcome: String,
    pub dichotomized: String,
    pub covariates: Vec<String>,
}

struct Table {
    index: HashMap<String, usize>,
    records: Vec<csv::StringRecord>,
    path: String,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = reader.headers()?.clone();
        let index = headers.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Table { index, records, path: path.display().to_string() })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Data(format!("{}: missing column '{name}'", self.path)))
    }

    fn number(&self, row: usize, col: usize, name: &str) -> Result<Option<f64>> {
        let cell = self.records[row].get(col).unwrap_or("");
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse::<f64>().map(Some).map_err(|_| {
            Error::Data(format!(
                "{}: row {}, column '{name}': non-numeric value '{cell}'",
                self.path,
                row + 1
            ))
        })
    }

    fn required(&self, row: usize, col: usize, name: &str) -> Result<f64> {
        self.number(row, col, name)?.ok_or_else(|| {
            Error::Data(format!("{}: row {}, column '{name}': missing value", self.path, row + 1))
        })
    }

    fn flag(&self, row: usize, col: usize, name: &str) -> Result<bool> {
        match self.required(row, col, name)? {
            1.0 => Ok(true),
            0.0 => Ok(false),
            v => Err(Error::Data(format!(
                "{}: row {}, column '{name}': expected 0 or 1, found {v}",
                self.path,
                row + 1
            ))),
        }
    }

    fn covariates(&self, row: usize, cols: &[(usize, &str)]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(cols.len() + 1);
        x.push(1.0);
        for &(c, name) in cols {
            x.push(self.required(row, c, name)?);
        }
        Ok(x)
    }

    fn covariate_columns<'a>(&self, roles: &'a Roles) -> Result<Vec<(usize, &'a str)>> {
        roles.covariates.iter().map(|n| Ok((self.column(n)?, n.as_str()))).collect()
    }
}

fn names(roles: &Roles) -> Vec<String> {
    std::iter::once("Intercept".to_string()).chain(roles.covariates.iter().cloned()).collect()
}

fn finish(roles: &Roles, rows: Vec<Observation>) -> Result<(FusedDataset, PreprocessReport)> {
    let n = rows.len();
    let data = FusedDataset::new(names(roles), rows)?;
    Ok((data, PreprocessReport::unchanged(n)))
}

/// Loads a pooled file with a source-flag column.
pub fn load_csv(path: &Path, roles: &Roles) -> Result<(FusedDataset, PreprocessReport)> {
    let t = Table::read(path)?;
    let r_col = t.column(&roles.source)?;
    let cov = t.covariate_columns(roles)?;
    let y_col = t.index.get(&roles.outcome).copied();
    let z_col = t.index.get(&roles.dichotomized).copied();
    let mut rows = Vec::with_capacity(t.records.len());
    for i in 0..t.records.len() {
        let x = t.covariates(i, &cov)?;
        if t.flag(i, r_col, &roles.source)? {
            let y_col = y_col.ok_or_else(|| {
                Error::Data(format!("{}: missing column '{}'", t.path, roles.outcome))
            })?;
            rows.push(Observation::target(t.required(i, y_col, &roles.outcome)?, x));
        } else {
            let z_col = z_col.ok_or_else(|| {
                Error::Data(format!("{}: missing column '{}'", t.path, roles.dichotomized))
            })?;
            rows.push(Observation::external(t.flag(i, z_col, &roles.dichotomized)?, x));
        }
    }
    finish(roles, rows)
}

/// Loads a target file (outcome + covariates) and an external file
/// (dichotomized outcome + covariates). Target rows come first.
pub fn load_two_files(target: &Path, external: &Path, roles: &Roles) -> Result<(FusedDataset, PreprocessReport)> {
    let mut rows = Vec::new();
    let t = Table::read(target)?;
    let cov = t.covariate_columns(roles)?;
    let y = t.column(&roles.outcome)?;
    for i in 0..t.records.len() {
        rows.push(Observation::target(t.required(i, y, &roles.outcome)?, t.covariates(i, &cov)?));
    }
    let e = Table::read(external)?;
    let cov = e.covariate_columns(roles)?;
    let z = e.column(&roles.dichotomized)?;
    for i in 0..e.records.len() {
        rows.push(Observation::external(e.flag(i, z, &roles.dichotomized)?, e.covariates(i, &cov)?));
    }
    finish(roles, rows)
}

/// Loads a file with the continuous outcome on every row, draws `n_target`
/// rows at random (stream keyed by `seed`) as the target sample and
/// dichotomizes the rest at `cutoff`.
pub fn load_split(
    path: &Path,
    roles: &Roles,
    n_target: usize,
    cutoff: f64,
    seed: u64,
) -> Result<(FusedDataset, PreprocessReport)> {
    let t = Table::read(path)?;
    let cov = t.covariate_columns(roles)?;
    let y = t.column(&roles.outcome)?;
    let n = t.records.len();
    if n_target > n {
        return Err(Error::Data(format!("cannot draw {n_target} target rows from {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, StreamTag::Split, 0));
    let mut is_target = vec![false; n];
    for &i in &order[..n_target] {
        is_target[i] = true;
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let yi = t.required(i, y, &roles.outcome)?;
        let x = t.covariates(i, &cov)?;
        rows.push(if is_target[i] {
            Observation::target(yi, x)
        } else {
            Observation::external(yi <= cutoff, x)
        });
    }
    finish(roles, rows)
}

/// Writes a dataset in the pooled layout read by [`load_csv`].
pub fn write_pooled_csv(data: &FusedDataset, path: &Path, roles: &Roles) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![roles.source.clone(), roles.outcome.clone(), roles.dichotomized.clone()];
    header.extend(data.names()[1..].iter().cloned());
    w.write_record(&header)?;
    for row in data.rows() {
        let mut rec = vec![
            if row.is_target() { "1".to_string() } else { "0".to_string() },
            row.y().map(|v| v.to_string()).unwrap_or_default(),
            match row.outcome {
                crate::data::Outcome::External(z) => (z as u8).to_string(),
                crate::data::Outcome::Target(_) => String::new(),
            },
        ];
        rec.extend(row.x[1..].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `a x = b` after checking that `cond(a) <= max_condition`.
pub fn solve_checked(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    max_condition: f64,
    what: &'static str,
) -> Result<DVector<f64>> {
    let condition = condition_number(a);
    if !(condition <= max_condition) {
        return Err(Error::Singular { what, condition });
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or(Error::Singular { what, condition })
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigen().eigenvalues.min()
}

/// Pseudo-inverse of a symmetric PSD matrix via its eigendecomposition.
/// Eigenvalues at or below `tol · λ_max` are treated as zero.
pub fn sym_pinv(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let inv: DVector<f64> = eig.eigenvalues.map(|e| if e > tol * lmax && e > 0.0 { 1.0 / e } else { 0.0 });
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&inv) * v.transpose();
    symmetrize(&mut out);
    out
}

/// Empirical (n - 1 denominator) cross-covariance of the columns of `a` and `b`.
pub fn cross_covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, b.nrows());
    let ma = a.row_mean();
    let mb = b.row_mean();
    let mut ca = a.clone();
    let mut cb = b.clone();
    for mut row in ca.row_iter_mut() {
        row -= &ma;
    }
    for mut row in cb.row_iter_mut() {
        row -= &mb;
    }
    ca.transpose() * cb / (n as f64 - 1.0)
}

pub fn covariance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = cross_covariance(a, a);
    symmetrize(&mut c);
    c
}

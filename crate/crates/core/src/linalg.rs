//! Dense symmetric eigen-solves and subspace comparison.

use nalgebra::{DMatrix, DVector};

use crate::error::{MaeError, Result};

/// Leading eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// `D x P`, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// Nonincreasing.
    pub values: DVector<f64>,
}

pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

/// Full eigendecomposition of `(S + S^T)/2`, eigenvalues sorted
/// nonincreasing, columns sign-normalised.
pub fn symmetric_eigen_sorted(s: &DMatrix<f64>) -> Result<EigenResult> {
    let d = s.nrows();
    if s.ncols() != d {
        return Err(MaeError::shape("symmetric matrix", format!("{d}x{d}"), format!("{d}x{}", s.ncols())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(MaeError::NonFinite("eigenproblem input".into()));
    }
    let eig = symmetrize(s)
        .try_symmetric_eigen(f64::EPSILON, 1000 * d.max(1))
        .ok_or(MaeError::EigenFailure(d))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vectors = eig.eigenvectors.select_columns(order.iter());
    normalize_signs(&mut vectors);
    let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    Ok(EigenResult { vectors, values })
}

/// The `p` eigenvectors of a symmetric `S` with the largest eigenvalues.
pub fn top_eigenvectors(s: &DMatrix<f64>, p: usize) -> Result<EigenResult> {
    let d = s.nrows();
    if p == 0 || p > d {
        return Err(MaeError::InvalidInput(format!(
            "requested {p} eigenvectors of a {d}x{d} matrix"
        )));
    }
    let full = symmetric_eigen_sorted(s)?;
    Ok(EigenResult {
        vectors: full.vectors.columns(0, p).into_owned(),
        values: full.values.rows(0, p).into_owned(),
    })
}

/// Flip each column so its largest-magnitude entry is positive (the first
/// such entry on ties).
pub fn normalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0usize;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Orthonormal basis of the column space of `m` (via thin QR).
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// Principal angles (radians, ascending) between the column spaces of `u`
/// and `v`. Computed from the sines — singular values of the component of
/// `v` orthogonal to `u` — so small angles keep full relative accuracy.
pub fn principal_angles(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Vec<f64>> {
    if u.nrows() != v.nrows() {
        return Err(MaeError::shape("principal_angles", u.nrows(), v.nrows()));
    }
    let qu = orthonormal_basis(u);
    let qv = orthonormal_basis(v);
    let (qu, qv) = if qu.ncols() >= qv.ncols() { (qu, qv) } else { (qv, qu) };
    let residual = &qv - &qu * (qu.transpose() * &qv);
    let sines = residual.svd(false, false).singular_values;
    let mut angles: Vec<f64> = sines.iter().map(|s| s.clamp(0.0, 1.0).asin()).collect();
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Largest principal angle between two column spaces.
pub fn max_principal_angle(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    Ok(principal_angles(u, v)?.into_iter().fold(0.0, f64::max))
}

/// `tr(R S R^T)` for symmetric `S`, i.e. `||R X||_F^2` when `S = X X^T`.
pub fn quadratic_trace(r: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    (r * s).component_mul(r).sum()
}

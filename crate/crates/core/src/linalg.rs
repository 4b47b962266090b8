//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{KnockoffError, Result};

/// Eigenvalues below this are treated as roundoff and clipped to zero.
pub const EIG_CLIP: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_square(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Symmetric square root via eigendecomposition, clipping eigenvalues in
/// `[-EIG_CLIP, 0)` to zero. Anything more negative is an error.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if min < -EIG_CLIP {
        return Err(KnockoffError::InfeasibleCovariance { min_eig: min });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Inverse symmetric square root of a positive-definite matrix.
pub fn pd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(KnockoffError::NotPositiveDefinite(format!(
            "minimum eigenvalue {min:e}"
        )));
    }
    let roots = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

pub fn pd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| KnockoffError::NotPositiveDefinite("cholesky failed".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

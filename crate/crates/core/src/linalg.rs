use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DrmError, Result};

/// Largest condition number accepted before a symmetric matrix is reported singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Inverse of a symmetric positive definite matrix via its eigendecomposition.
///
/// Fails with [`DrmError::Singular`] when the smallest eigenvalue is not
/// positive or the condition number exceeds [`MAX_CONDITION`].
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(DrmError::NonFinite("symmetric inverse"));
    }
    let sym = symmetrize(a);
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if min <= 0.0 || condition > MAX_CONDITION {
        return Err(DrmError::Singular {
            min_eigenvalue: min,
            condition,
        });
    }
    let inv_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| 1.0 / v),
    );
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&inv_vals) * q.transpose())))
}

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}

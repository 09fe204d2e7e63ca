//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative eigenvalue floor below which a ridge is added.
pub const RIDGE_TRIGGER: f64 = 1e-12;
/// Ridge size as a multiple of `trace / dim`.
pub const RIDGE_SCALE: f64 = 1e-10;

/// Inverse of a symmetric PSD matrix with the ridge that was needed, if any.
#[derive(Debug, Clone)]
pub struct SymInverse {
    pub inverse: DMatrix<f64>,
    pub ridge: f64,
    pub min_eig: f64,
    pub max_eig: f64,
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(min, max)` eigenvalues of the symmetric part of `m`.
pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let ev = eig.eigenvalues;
    (ev.min(), ev.max())
}

/// Inverse of a symmetric PSD matrix. Cholesky when the spectrum is well
/// separated from zero; otherwise `RIDGE_SCALE · trace/dim` is added to the
/// eigenvalues and the inverse is rebuilt from the eigendecomposition.
pub fn sym_inverse(m: &DMatrix<f64>, what: &'static str, advice: &'static str) -> Result<SymInverse> {
    let n = m.nrows();
    if n != m.ncols() || n == 0 {
        return Err(Error::DimensionMismatch { what, expected: n, got: m.ncols() });
    }
    let sym = symmetrize(m);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { what, advice });
    }
    let eig = SymmetricEigen::new(sym.clone());
    let min_eig = eig.eigenvalues.min();
    let max_eig = eig.eigenvalues.max();
    if !(max_eig > 0.0) {
        return Err(Error::Singular { what, advice });
    }
    let ridge = if min_eig < RIDGE_TRIGGER * max_eig {
        let trace: f64 = eig.eigenvalues.iter().sum();
        RIDGE_SCALE * trace.max(max_eig) / n as f64
    } else {
        0.0
    };
    if !(min_eig + ridge > 0.0) {
        return Err(Error::Singular { what, advice });
    }
    if ridge == 0.0 {
        if let Some(chol) = sym.cholesky() {
            let inverse = symmetrize(&chol.inverse());
            return Ok(SymInverse { inverse, ridge, min_eig, max_eig });
        }
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / (l + ridge));
    let q = &eig.eigenvectors;
    let inverse = symmetrize(&(q * DMatrix::from_diagonal(&inv_vals) * q.transpose()));
    Ok(SymInverse { inverse, ridge, min_eig, max_eig })
}

/// Quadratic form `vᵀ M v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

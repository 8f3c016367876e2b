//! Small dense linear-algebra helpers shared by the model, load and audit code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SphsError};

/// Relative tolerance used to accept a matrix as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Absolute tolerance on `|A + A^T|` for skew-symmetric matrices.
pub const SKEW_TOL: f64 = 1e-12;

/// `|A - A^T|_F / |A|_F`, zero for the zero matrix.
pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

pub fn skew_residual(a: &DMatrix<f64>) -> f64 {
    (a + a.transpose()).norm()
}

pub fn ensure_square(what: &'static str, a: &DMatrix<f64>) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(SphsError::NotSquare {
            what,
            rows: a.nrows(),
            cols: a.ncols(),
        })
    }
}

pub fn ensure_symmetric(what: &'static str, a: &DMatrix<f64>) -> Result<()> {
    ensure_square(what, a)?;
    let asymmetry = relative_asymmetry(a);
    if asymmetry > SYMMETRY_TOL {
        return Err(SphsError::NotSymmetric { what, asymmetry });
    }
    Ok(())
}

pub fn ensure_skew(what: &'static str, a: &DMatrix<f64>) -> Result<()> {
    ensure_square(what, a)?;
    let residual = skew_residual(a);
    if residual > SKEW_TOL {
        return Err(SphsError::NotSkew { what, residual });
    }
    Ok(())
}

/// Smallest and largest eigenvalue of the symmetric part of `a`.
pub fn symmetric_eigen_bounds(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// `x^T A x`.
pub fn quad_form(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(a * x))
}

pub fn ensure_len(what: &'static str, v: &DVector<f64>, expected: usize) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(SphsError::DimensionMismatch {
            what,
            expected,
            found: v.len(),
        })
    }
}

/// 2x2 rotation generator `[[0, -w], [w, 0]]`.
pub fn rotation_generator(omega: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, -omega, omega, 0.0])
}

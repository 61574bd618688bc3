//! Small dense linear-algebra helpers shared by the transition, stabilizer
//! and plant modules.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative margin on `|det(I + mu A)|`, scaled by `||I + mu A||^n`.
pub const DET_MARGIN: f64 = 1e-12;

/// Below this `||X||` the `phi_1` series is used instead of the augmented
/// exponential.
const PHI1_SERIES_RADIUS: f64 = 1e-4;

/// `I + mu A`, checked for regressivity.
pub fn regressive_factor(a: &DMatrix<f64>, mu: f64, t: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = DMatrix::identity(n, n) + a * mu;
    let det = m.determinant();
    let scale = m.norm().powi(n as i32).max(f64::MIN_POSITIVE);
    if !(det.abs() > DET_MARGIN * scale) {
        return Err(Error::Singularity { t, det });
    }
    Ok(m)
}

/// Inverse of a square matrix, reporting `t` on failure.
pub fn invert(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let det = m.determinant();
    m.clone().try_inverse().ok_or(Error::Singularity { t, det })
}

/// Matrix exponential.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

/// `phi_1(X) = sum_{i>=1} X^{i-1} / i!`, so that `exp(X) = I + X phi_1(X)`.
///
/// Evaluated as the upper-right block of `exp([[X, I], [0, 0]])`, or by the
/// Taylor series when `||X||` is tiny.
pub fn phi1(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let norm = x.norm();
    if norm < PHI1_SERIES_RADIUS {
        // Terms decay like norm^k / (k+1)!; stop once below 1e-18 relative.
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        let mut k = 1usize;
        loop {
            term = &term * x / (k as f64 + 1.0);
            sum += &term;
            if term.norm() < 1e-18 || k > 20 {
                break;
            }
            k += 1;
        }
        return sum;
    }
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(x);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    expm(&aug).view((0, n), (n, n)).into_owned()
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn sym_eig_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let lo = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    sym_eig_bounds(m).1
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest modulus among the (complex) eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// `||a - b||_F / ||a||_F` (absolute when `a` vanishes).
pub fn rel_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = a.norm();
    if s > 0.0 {
        d / s
    } else {
        d
    }
}

/// Inverse of a symmetric positive definite matrix through a Cholesky
/// factorization, gated on `lambda_min > tolerance * lambda_max`.
///
/// Returns the inverse and the extreme eigenvalues; the gate failure is
/// reported as `Error::Controllability` at `t`.
pub fn spd_inverse(g: &DMatrix<f64>, tolerance: f64, t: f64) -> Result<(DMatrix<f64>, f64, f64)> {
    let (lo, hi) = sym_eig_bounds(g);
    if !(hi > 0.0 && lo > tolerance * hi) {
        return Err(Error::Controllability {
            t,
            eps1: lo,
            eps2: hi,
        });
    }
    let chol = Cholesky::new(symmetrize(g)).ok_or(Error::Controllability {
        t,
        eps1: lo,
        eps2: hi,
    })?;
    Ok((symmetrize(&chol.inverse()), lo, hi))
}

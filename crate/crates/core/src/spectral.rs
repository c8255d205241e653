//! Spectral radius of the recurrent weight matrix.
//!
//! Up to [`DENSE_LIMIT`] units the radius comes from a dense Schur
//! decomposition. Larger matrices use a two-vector subspace power iteration,
//! which tracks a complex-conjugate dominant pair as well as a real one.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;

use crate::error::{Error, Result};

pub const DENSE_LIMIT: usize = 512;
pub const POWER_TOL: f64 = 1e-9;
pub const POWER_MAX_ITER: usize = 10_000;

pub fn spectral_radius(w: &DMatrix<f64>, rng: &mut impl Rng) -> Result<f64> {
    if w.nrows() != w.ncols() {
        return Err(Error::Dimension {
            context: "spectral_radius",
            expected: w.nrows(),
            actual: w.ncols(),
        });
    }
    if w.nrows() <= DENSE_LIMIT {
        dense_radius(w)
    } else {
        match power_radius(w, rng, POWER_TOL, POWER_MAX_ITER) {
            Some(r) => Ok(r),
            // one random restart
            None => power_radius(w, rng, POWER_TOL, POWER_MAX_ITER).ok_or_else(|| {
                Error::SpectralRadius {
                    attempts: 2,
                    reason: "power iteration did not converge".into(),
                }
            }),
        }
    }
}

pub fn dense_radius(w: &DMatrix<f64>) -> Result<f64> {
    let schur = w.clone().try_schur(f64::EPSILON, 10_000).ok_or_else(|| Error::SpectralRadius {
        attempts: 1,
        reason: "Schur decomposition did not converge".into(),
    })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Subspace iteration on two vectors. Returns `None` when successive
/// estimates have not settled to `tol` (relative) within `max_iter` steps.
pub fn power_radius(w: &DMatrix<f64>, rng: &mut impl Rng, tol: f64, max_iter: usize) -> Option<f64> {
    let n = w.nrows();
    if n == 0 {
        return Some(0.0);
    }
    if n == 1 {
        return Some(w[(0, 0)].abs());
    }
    let mut q = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
    orthonormalize(&mut q)?;
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let z = w * &q;
        let h: DMatrix<f64> = q.transpose() * &z;
        let est = eig2_radius(Matrix2::new(h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]));
        q = z;
        if orthonormalize(&mut q).is_none() {
            // the iterate collapsed: the matrix is (numerically) nilpotent on this subspace
            return Some(est);
        }
        if (est - prev).abs() <= tol * est.max(f64::MIN_POSITIVE) {
            return Some(est);
        }
        prev = est;
    }
    None
}

fn orthonormalize(q: &mut DMatrix<f64>) -> Option<()> {
    let c0: DVector<f64> = q.column(0).into_owned();
    let n0 = c0.norm();
    if n0 == 0.0 || !n0.is_finite() {
        return None;
    }
    let c0 = c0 / n0;
    let mut c1: DVector<f64> = q.column(1).into_owned();
    c1 -= &c0 * c0.dot(&c1);
    let n1 = c1.norm();
    if n1 == 0.0 || !n1.is_finite() {
        return None;
    }
    c1 /= n1;
    q.set_column(0, &c0);
    q.set_column(1, &c1);
    Some(())
}

fn eig2_radius(h: Matrix2<f64>) -> f64 {
    let tr = h[(0, 0)] + h[(1, 1)];
    let det = h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        (tr / 2.0 + s).abs().max((tr / 2.0 - s).abs())
    } else {
        // complex pair: |lambda|^2 = det
        det.abs().sqrt()
    }
}

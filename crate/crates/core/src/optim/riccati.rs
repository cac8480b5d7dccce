//! Discrete algebraic Riccati equation of the Kalman filter.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::linalg::{spd_inverse, symmetrize};

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;
const DIVERGENCE: f64 = 1e12;

/// One step of the predicted-covariance recursion
/// `P⁺ = A P Aᵀ − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ + Q`.
pub fn riccati_step(p: &DMatrix<f64>, a: &DMatrix<f64>, c: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pct = p * c.transpose();
    let s = c * &pct + r;
    let k = &pct * spd_inverse(&s)?;
    let p_filt = p - &k * pct.transpose();
    let mut next = a * p_filt * a.transpose() + q;
    symmetrize(&mut next);
    Ok(next)
}

/// Current-form gain `P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn kalman_gain(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pct = p * c.transpose();
    Ok(&pct * spd_inverse(&(c * &pct + r))?)
}

/// Returns the steady predicted covariance and its current-form gain.
pub fn solve_dare(a: &DMatrix<f64>, c: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    check_len("A columns", n, a.ncols())?;
    check_len("C columns", n, c.ncols())?;
    check_len("Q size", n, q.nrows())?;
    check_len("Q size", n, q.ncols())?;
    check_len("R size", c.nrows(), r.nrows())?;
    check_len("R size", c.nrows(), r.ncols())?;
    let mut p = q.clone();
    for it in 0..DARE_MAX_ITER {
        let next = riccati_step(&p, a, c, q, r)?;
        if !next.iter().all(|v| v.is_finite()) || next.amax() > DIVERGENCE {
            return Err(Error::RiccatiDivergence);
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= DARE_TOL * p.amax().max(1.0) {
            log::debug!("Riccati recursion converged after {} iterations", it + 1);
            let k = kalman_gain(&p, c, r)?;
            return Ok((p, k));
        }
    }
    Err(Error::RiccatiNoConvergence(DARE_MAX_ITER))
}

//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Regularization added to the diagonal when a Cholesky factorization fails.
pub const CHOL_JITTER: f64 = 1e-10;

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

/// Cholesky factorization, retrying once with `jitter·I` added.
pub fn cholesky_jitter(m: &DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let scale = m.diagonal().amax().max(1.0);
    let reg = m + DMatrix::identity(m.nrows(), m.ncols()) * (jitter * scale);
    reg.cholesky().ok_or(Error::Cholesky)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = cholesky_jitter(m, CHOL_JITTER)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// General square solve through LU.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Least-squares (minimum norm) solution and the numerical rank of `a`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    if a.ncols() == 0 {
        return Ok((DVector::zeros(0), 0));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let tol = smax * 1e-12 * (a.nrows().max(a.ncols()) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let x = svd
        .solve(b, tol)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok((x, rank))
}

/// Numerical rank with tolerance `rel_tol·σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let s = m.clone().singular_values();
    let smax = s.amax();
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

/// Stacked observability matrix `[C; CA; …; CA^{n-1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut obs = DMatrix::zeros(p * n, n);
    let mut block = c.clone();
    for i in 0..n {
        obs.view_mut((i * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    obs
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().min()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Matrix power by repeated multiplication (small exponents only).
pub fn mat_pow(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_observability() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_eq!(rank(&observability_matrix(&a, &c), 1e-8), 2);
        let c2 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert_eq!(rank(&observability_matrix(&a, &c2), 1e-8), 1);
    }

    #[test]
    fn lstsq_handles_overdetermined_consistent_systems() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 0.0, -1.0]);
        let (x, r) = lstsq(&a, &b).unwrap();
        assert_eq!(r, 2);
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(cholesky_jitter(&m, CHOL_JITTER).is_ok());
    }
}

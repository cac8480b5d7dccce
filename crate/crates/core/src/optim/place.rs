//! Observer pole placement.
//!
//! Single-output pairs use Ackermann's formula on the dual system. With
//! several outputs a seeded random preliminary gain makes `A − L₀C` cyclic, so
//! that a single combination `vᵀy` of the outputs observes every mode; the
//! remaining single-output problem is again solved by Ackermann's formula.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::{observability_matrix, rank};

const ATTEMPTS: usize = 50;

/// Real coefficients `[c₁, …, cₙ]` of `∏(s − pᵢ) = sⁿ + c₁sⁿ⁻¹ + … + cₙ`.
fn char_poly(poles: &[Complex<f64>]) -> Vec<f64> {
    let mut coef = vec![Complex::new(1.0, 0.0)];
    for &p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); coef.len() + 1];
        for (i, &c) in coef.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * p;
        }
        coef = next;
    }
    coef[1..].iter().map(|c| c.re).collect()
}

/// Gain `k` such that `F − g kᵀ` has the given characteristic polynomial, or
/// `None` when `(F, g)` is numerically uncontrollable.
fn ackermann(f: &DMatrix<f64>, g: &DVector<f64>, coef: &[f64]) -> Option<DVector<f64>> {
    let n = f.nrows();
    let mut w = DMatrix::zeros(n, n);
    let mut col = g.clone();
    for j in 0..n {
        w.set_column(j, &col);
        col = f * col;
    }
    let sv = w.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-12 * sv.max() {
        return None;
    }
    let mut phi = DMatrix::identity(n, n);
    for &c in coef {
        phi = f * phi + DMatrix::identity(n, n) * c;
    }
    let mut e_n = DVector::zeros(n);
    e_n[n - 1] = 1.0;
    let row = w.transpose().lu().solve(&e_n)?;
    Some(phi.transpose() * row)
}

fn spectrum_matches(m: &DMatrix<f64>, desired: &[Complex<f64>], tol: f64) -> bool {
    let mut got: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    for &p in desired {
        let Some((idx, dist)) = got
            .iter()
            .enumerate()
            .map(|(i, g)| (i, (g - p).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
        else {
            return false;
        };
        if dist > tol * p.norm().max(1.0) {
            return false;
        }
        got.swap_remove(idx);
    }
    true
}

/// Observer gain `L` placing the eigenvalues of `A − L C` at `desired`.
pub fn place_poles(a: &DMatrix<f64>, c: &DMatrix<f64>, desired: &[Complex<f64>]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_len("A columns", n, a.ncols())?;
    check_len("C columns", n, c.ncols())?;
    check_len("number of poles", n, desired.len())?;
    let ny = c.nrows();
    for (i, p) in desired.iter().enumerate() {
        if !p.re.is_finite() || !p.im.is_finite() {
            return Err(Error::NonFinite("desired poles"));
        }
        if desired[..i].iter().any(|q| (q - p).norm() <= 1e-9 * p.norm().max(1.0)) {
            return Err(Error::PolePlacement("repeated poles are not supported".into()));
        }
        if p.im != 0.0 && !desired.iter().any(|q| (q - p.conj()).norm() <= 1e-9 * p.norm().max(1.0)) {
            return Err(Error::PolePlacement("complex poles must come in conjugate pairs".into()));
        }
    }
    if rank(&observability_matrix(a, c), 1e-10) < n {
        return Err(Error::PolePlacement("the pair (A, C) is not observable".into()));
    }
    let coef = char_poly(desired);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let scale = a.amax().max(1.0) / c.amax().max(1e-12);
    for attempt in 0..ATTEMPTS {
        let (l0, v) = if attempt == 0 {
            let mut v = DVector::zeros(ny);
            v[0] = 1.0;
            (DMatrix::zeros(n, ny), v)
        } else if attempt == 1 {
            (DMatrix::zeros(n, ny), DVector::from_element(ny, 1.0))
        } else {
            let l0 = DMatrix::from_fn(n, ny, |_, _| rng.random_range(-1.0..1.0) * scale * 0.5);
            let v = DVector::from_fn(ny, |_, _| rng.random_range(-1.0..1.0));
            (l0, v)
        };
        let m = a - &l0 * c;
        let g = c.transpose() * &v;
        let Some(k) = ackermann(&m.transpose(), &g, &coef) else {
            continue;
        };
        let l = l0 + &k * v.transpose();
        if spectrum_matches(&(a - &l * c), desired, 1e-6) {
            return Ok(l);
        }
    }
    Err(Error::PolePlacement("could not reach the requested spectrum".into()))
}

/// Convenience wrapper for real poles.
pub fn place_real_poles(a: &DMatrix<f64>, c: &DMatrix<f64>, desired: &[f64]) -> Result<DMatrix<f64>> {
    let poles: Vec<Complex<f64>> = desired.iter().map(|&p| Complex::new(p, 0.0)).collect();
    place_poles(a, c, &poles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_real_eigs(m: &DMatrix<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        e.sort_by(f64::total_cmp);
        e
    }

    #[test]
    fn double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let l = place_real_poles(&a, &c, &[0.5, 0.6]).unwrap();
        // Characteristic polynomial s² + l₁ s + l₂ = (s − 0.5)(s − 0.6)
        assert!((l[(0, 0)] + 1.1).abs() < 1e-12 && (l[(1, 0)] - 0.3).abs() < 1e-12);
        let e = sorted_real_eigs(&(a - l * c));
        assert!((e[0] - 0.5).abs() < 1e-10 && (e[1] - 0.6).abs() < 1e-10);
    }

    #[test]
    fn complex_pair_and_multi_output() {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.0, 0.8, 0.3, 0.2, 0.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let poles = [Complex::new(0.3, 0.2), Complex::new(0.3, -0.2), Complex::new(0.1, 0.0)];
        let l = place_poles(&a, &c, &poles).unwrap();
        assert!(spectrum_matches(&(a - l * c), &poles, 1e-8));
    }

    #[test]
    fn rejections() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(place_real_poles(&a, &c, &[0.1, 0.2]).is_err());
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(place_real_poles(&a, &c, &[0.1, 0.1]).is_err());
        assert!(place_poles(&a, &c, &[Complex::new(0.1, 0.1), Complex::new(0.2, 0.0)]).is_err());
    }
}

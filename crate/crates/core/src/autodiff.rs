//! Forward-mode automatic differentiation with dual numbers.
//!
//! [`Dual<T, N>`] carries a value and `N` directional derivatives. The inner
//! scalar `T` is itself any [`Real`], so `Dual<Dual<f64, N>, N>` yields second
//! derivatives. Wide inputs are differentiated chunk by chunk, `N` seeds at a
//! time.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default seed width for model and optimizer derivatives.
pub const CHUNK: usize = 8;

/// First-order dual number used for Jacobians and gradients.
pub type Dual8 = Dual<f64, CHUNK>;
/// Nested dual number used for exact Hessians.
pub type HyperDual8 = Dual<Dual8, CHUNK>;

/// Scalar field closed under the operations model and cost functions use.
///
/// Comparisons and branching must go through [`Real::value`]. At non-smooth
/// points (`abs` at zero) the derivative of the non-negative branch is used.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    fn from_f64(v: f64) -> Self;
    /// Underlying real value, with every derivative part dropped.
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn atan(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, n: f64) -> Self;
    fn abs(self) -> Self;
    /// True when the value and every derivative part are finite.
    fn is_finite_all(&self) -> bool;
    /// True when the value and every derivative part are exactly zero.
    fn is_zero_all(&self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, n: f64) -> Self {
        f64::powf(self, n)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn is_finite_all(&self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn is_zero_all(&self) -> bool {
        *self == 0.0
    }
}

/// Dual number `re + Σ eps[i]·εᵢ` with `εᵢ·εⱼ = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

impl<T: Real, const N: usize> Dual<T, N> {
    pub fn constant(re: T) -> Self {
        Dual { re, eps: [T::zero(); N] }
    }

    /// Variable seeded along direction `i`.
    pub fn variable(re: T, i: usize) -> Self {
        let mut d = Self::constant(re);
        d.eps[i] = T::one();
        d
    }

    /// Applies a scalar function with value `f` and derivative `df` at `self.re`.
    #[inline]
    fn chain(self, f: T, df: T) -> Self {
        let mut eps = self.eps;
        // Untouched directions stay zero even where df is infinite.
        for e in eps.iter_mut() {
            if !e.is_zero_all() {
                *e = *e * df;
            }
        }
        Dual { re: f, eps }
    }
}

impl<T: Real, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self.re += rhs.re;
        for i in 0..N {
            self.eps[i] += rhs.eps[i];
        }
        self
    }
}

impl<T: Real, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self.re -= rhs.re;
        for i in 0..N {
            self.eps[i] -= rhs.eps[i];
        }
        self
    }
}

impl<T: Real, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [T::zero(); N];
        for i in 0..N {
            eps[i] = self.re * rhs.eps[i] + self.eps[i] * rhs.re;
        }
        Dual { re: self.re * rhs.re, eps }
    }
}

impl<T: Real, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.re;
        let re = self.re * inv;
        let mut eps = [T::zero(); N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Dual { re, eps }
    }
}

impl<T: Real, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.re = -self.re;
        for e in self.eps.iter_mut() {
            *e = -*e;
        }
        self
    }
}

impl<T: Real, const N: usize> Add<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: f64) -> Self {
        self.re = self.re + rhs;
        self
    }
}

impl<T: Real, const N: usize> Sub<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: f64) -> Self {
        self.re = self.re - rhs;
        self
    }
}

impl<T: Real, const N: usize> Mul<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, rhs: f64) -> Self {
        self.re = self.re * rhs;
        for e in self.eps.iter_mut() {
            *e = *e * rhs;
        }
        self
    }
}

impl<T: Real, const N: usize> Div<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self * (1.0 / rhs)
    }
}

impl<T: Real, const N: usize> Add<Dual<T, N>> for f64 {
    type Output = Dual<T, N>;
    #[inline]
    fn add(self, rhs: Dual<T, N>) -> Dual<T, N> {
        rhs + self
    }
}

impl<T: Real, const N: usize> Sub<Dual<T, N>> for f64 {
    type Output = Dual<T, N>;
    #[inline]
    fn sub(self, rhs: Dual<T, N>) -> Dual<T, N> {
        -rhs + self
    }
}

impl<T: Real, const N: usize> Mul<Dual<T, N>> for f64 {
    type Output = Dual<T, N>;
    #[inline]
    fn mul(self, rhs: Dual<T, N>) -> Dual<T, N> {
        rhs * self
    }
}

impl<T: Real, const N: usize> Div<Dual<T, N>> for f64 {
    type Output = Dual<T, N>;
    #[inline]
    fn div(self, rhs: Dual<T, N>) -> Dual<T, N> {
        Dual::constant(T::from_f64(self)) / rhs
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl<T: Real, const N: usize> $tr for Dual<T, N> {
            #[inline]
            fn $m(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);

impl<T: Real, const N: usize> Real for Dual<T, N> {
    fn from_f64(v: f64) -> Self {
        Self::constant(T::from_f64(v))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, t * t + 1.0)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::one() / self.re)
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::one() / (s * 2.0))
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, -(t * t) + 1.0)
    }
    fn atan(self) -> Self {
        self.chain(self.re.atan(), T::one() / (self.re * self.re + 1.0))
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        self.chain(self.re.powi(n), self.re.powi(n - 1) * n as f64)
    }
    fn powf(self, n: f64) -> Self {
        self.chain(self.re.powf(n), self.re.powf(n - 1.0) * n)
    }
    fn abs(self) -> Self {
        if self.re.value() >= 0.0 {
            self
        } else {
            -self
        }
    }
    fn is_finite_all(&self) -> bool {
        self.re.is_finite_all() && self.eps.iter().all(Real::is_finite_all)
    }
    fn is_zero_all(&self) -> bool {
        self.re.is_zero_all() && self.eps.iter().all(Real::is_zero_all)
    }
}

/// Quadratic form `rᵀ W r`, skipping structural zeros of `W`.
pub fn quad_form<T: Real>(r: &[T], w: &DMatrix<f64>) -> T {
    let mut acc = T::zero();
    for i in 0..r.len() {
        for j in 0..r.len() {
            let c = w[(i, j)];
            if c != 0.0 {
                acc += r[i] * r[j] * c;
            }
        }
    }
    acc
}

/// Jacobian of `f` at `x`, seeding `N` input directions per evaluation.
///
/// `f` must return the same number of outputs on every call.
pub fn jacobian<const N: usize, F>(f: F, x: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[Dual<f64, N>]) -> Vec<Dual<f64, N>>,
{
    assert!(N > 0, "seed width must be positive");
    let n = x.len();
    let mut jac: Option<DMatrix<f64>> = None;
    let mut seeded: Vec<Dual<f64, N>> = x.iter().map(|&v| Dual::constant(v)).collect();
    let mut start = 0;
    loop {
        let width = N.min(n.saturating_sub(start));
        for (j, s) in seeded.iter_mut().enumerate() {
            s.eps = [0.0; N];
            if j >= start && j < start + width {
                s.eps[j - start] = 1.0;
            }
        }
        let out = f(&seeded);
        let jm = jac.get_or_insert_with(|| DMatrix::zeros(out.len(), n));
        for (i, yi) in out.iter().enumerate() {
            for k in 0..width {
                let v = yi.eps[k];
                if !v.is_finite() {
                    return Err(Error::NonFiniteDerivative { output: i, input: start + k });
                }
                jm[(i, start + k)] = v;
            }
        }
        start += width;
        if start >= n {
            break;
        }
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, n)))
}

/// Gradient of a scalar function at `x`.
pub fn gradient<const N: usize, F>(f: F, x: &[f64]) -> Result<DVector<f64>>
where
    F: Fn(&[Dual<f64, N>]) -> Dual<f64, N>,
{
    let jac = jacobian::<N, _>(|z| vec![f(z)], x)?;
    Ok(jac.row(0).transpose())
}

/// Value, gradient and exact Hessian of a scalar function, chunked in both
/// seeding levels.
pub fn hessian<F>(f: F, x: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&[HyperDual8]) -> HyperDual8,
{
    let n = x.len();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut value = f64::NAN;
    let chunks: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let mut z: Vec<HyperDual8> = x.iter().map(|&v| HyperDual8::from_f64(v)).collect();
    for &outer in &chunks {
        for &inner in &chunks {
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = HyperDual8::from_f64(x[j]);
                if j >= outer && j < outer + CHUNK {
                    zj.eps[j - outer].re = 1.0;
                }
                if j >= inner && j < inner + CHUNK {
                    zj.re.eps[j - inner] = 1.0;
                }
            }
            let out = f(&z);
            value = out.re.re;
            for a in 0..CHUNK.min(n - outer) {
                let g = out.eps[a].re;
                if !g.is_finite() {
                    return Err(Error::NonFiniteDerivative { output: 0, input: outer + a });
                }
                grad[outer + a] = g;
                for b in 0..CHUNK.min(n - inner) {
                    let h = out.eps[a].eps[b];
                    if !h.is_finite() {
                        return Err(Error::NonFiniteDerivative { output: 0, input: inner + b });
                    }
                    hess[(outer + a, inner + b)] = h;
                }
            }
        }
    }
    if n == 0 {
        value = f(&z).re.re;
    }
    Ok((value, grad, hess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    fn smooth<T: Real>(z: &[T]) -> T {
        z[0].sin() * z[1].exp() + (z[2] * z[2] + 1.0).ln() - z[0].powi(3) / (z[1].cos() + 3.0)
            + (z[2] * z[2] + 2.0).sqrt().tanh()
            + z[1].atan() * z[0].powf(2.0)
    }

    #[test]
    fn derivative_of_sin_at_zero() {
        let g = gradient::<1, _>(|z| z[0].sin(), &[0.0]).unwrap();
        assert_eq!(g[0], 1.0);
    }

    #[test]
    fn affine_map_jacobian_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let b = [0.3, -0.7];
        let jac = jacobian::<2, _>(
            |x| {
                (0..2)
                    .map(|i| (0..3).fold(Dual::from_f64(b[i]), |acc, j| acc + x[j] * m[(i, j)]))
                    .collect()
            },
            &[0.1, 0.2, 0.3],
        )
        .unwrap();
        assert_eq!(jac, m);
    }

    #[test]
    fn bilinear_and_quadratic_gradients() {
        let g = gradient::<2, _>(|z| z[0] * z[1], &[2.0, -3.0]).unwrap();
        assert_eq!(g.as_slice(), &[-3.0, 2.0]);
        let z0 = [0.5, -1.5, 2.0];
        let g = gradient::<CHUNK, _>(|z| z.iter().fold(Dual::zero(), |a, &v| a + v * v) * 0.5, &z0).unwrap();
        assert_eq!(g.as_slice(), &z0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = [0.3, -0.4, 1.1];
        let g = gradient::<CHUNK, _>(smooth, &x).unwrap();
        let fd = central_diff(smooth::<f64>, &x, 1e-6);
        for (a, b) in g.iter().zip(fd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let x = [0.3, -0.4, 1.1];
        let (v, g, h) = hessian(smooth, &x).unwrap();
        assert!((v - smooth(&x)).abs() < 1e-15);
        let g2 = gradient::<CHUNK, _>(smooth, &x).unwrap();
        assert!((g - g2).amax() < 1e-14);
        for i in 0..3 {
            let fd = central_diff(
                |z| gradient::<CHUNK, _>(smooth, z).unwrap()[i],
                &x,
                1e-6,
            );
            for j in 0..3 {
                assert!((h[(i, j)] - fd[j]).abs() < 1e-6);
            }
        }
        assert!((h.clone() - h.transpose()).amax() < 1e-12);
    }

    #[test]
    fn wide_hessian_uses_several_chunks() {
        let n = 19;
        let x: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.7).collect();
        let f = |z: &[HyperDual8]| {
            let mut acc = HyperDual8::zero();
            for i in 0..z.len() {
                acc += z[i] * z[(i * 7 + 3) % z.len()] * (1.0 + i as f64) + z[i].sin();
            }
            acc
        };
        let (_, _, h) = hessian(f, &x).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut expect = 0.0;
                for k in 0..n {
                    let m = (k * 7 + 3) % n;
                    let w = 1.0 + k as f64;
                    if k == i && m == j {
                        expect += w;
                    }
                    if k == j && m == i {
                        expect += w;
                    }
                }
                if i == j {
                    expect -= x[i].sin();
                }
                assert!((h[(i, j)] - expect).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn non_finite_partial_reports_coordinate() {
        let err = jacobian::<2, _>(|x| vec![x[0], x[1].sqrt()], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteDerivative { output: 1, input: 1 }), "{err:?}");
    }

    fn poly<T: Real>(x: &[T]) -> Vec<T> {
        let inner: Vec<T> = (0..x.len())
            .map(|i| x[i] * x[(i + 1) % x.len()] + x[i].powi(3) * 0.5 - x[(i + 5) % x.len()] * 2.0)
            .collect();
        (0..4)
            .map(|k| {
                inner.iter().enumerate().fold(T::zero(), |acc, (i, &v)| {
                    acc + v * v * ((i + k) % 3) as f64 + v * (k as f64 + 1.0)
                })
            })
            .collect()
    }

    fn inner_map<T: Real>(x: &[T]) -> Vec<T> {
        (0..x.len())
            .map(|i| x[i] * x[(i + 1) % x.len()] + x[i].powi(3) * 0.5 - x[(i + 5) % x.len()] * 2.0)
            .collect()
    }

    fn outer_map<T: Real>(v: &[T]) -> Vec<T> {
        (0..4)
            .map(|k| {
                v.iter().enumerate().fold(T::zero(), |acc, (i, &w)| {
                    acc + w * w * ((i + k) % 3) as f64 + w * (k as f64 + 1.0)
                })
            })
            .collect()
    }

    proptest! {
        #[test]
        fn chunked_and_one_shot_seeding_agree(x in prop::collection::vec(-2.0f64..2.0, 20)) {
            let chunked = jacobian::<4, _>(|z| poly(z), &x).unwrap();
            let one_shot = jacobian::<32, _>(|z| poly(z), &x).unwrap();
            prop_assert!((chunked - one_shot).amax() <= 1e-15);
        }

        #[test]
        fn chain_rule_holds(x in prop::collection::vec(-1.5f64..1.5, 12)) {
            let whole = jacobian::<CHUNK, _>(|z| poly(z), &x).unwrap();
            let inner = jacobian::<CHUNK, _>(|z| inner_map(z), &x).unwrap();
            let v = inner_map(&x);
            let outer = jacobian::<CHUNK, _>(|z| outer_map(z), &v).unwrap();
            let composed = outer * inner;
            let scale = whole.amax().max(1.0);
            prop_assert!((whole - composed).amax() <= 1e-12 * scale);
        }
    }
}

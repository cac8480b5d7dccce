//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use mpc_core::estimator::StateEstimator;
use mpc_core::linalg::spectral_radius;
use mpc_core::model::{LinearModel, ModelScalar};
use mpc_core::optim::{Nlp, QpProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stable model with spectral radius at most 0.9 and a random
/// operating point.
pub fn random_model(rng: &mut ChaCha8Rng, nx: usize, nu: usize, ny: usize, nd: usize) -> LinearModel {
    let mut a = DMatrix::from_fn(nx, nx, |_, _| rng.random_range(-0.5..0.5));
    let rho = spectral_radius(&a);
    a *= 0.9 / rho.max(0.9);
    let bu = DMatrix::from_fn(nx, nu, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(ny, nx, |_, _| rng.random_range(-1.0..1.0));
    let bd = DMatrix::from_fn(nx, nd, |_, _| rng.random_range(-1.0..1.0));
    let dd = DMatrix::from_fn(ny, nd, |_, _| rng.random_range(-1.0..1.0));
    let uop: Vec<f64> = (0..nu).map(|_| rng.random_range(-2.0..2.0)).collect();
    let yop: Vec<f64> = (0..ny).map(|_| rng.random_range(-2.0..2.0)).collect();
    let dop: Vec<f64> = (0..nd).map(|_| rng.random_range(-2.0..2.0)).collect();
    LinearModel::new(a, bu, c, bd, dd, 1.0).unwrap().with_operating_point(&uop, &yop, &dop).unwrap()
}

/// Random `(u, ym, d)` sequence around the operating point of `m`.
pub fn random_signals(rng: &mut ChaCha8Rng, m: &LinearModel, n: usize) -> Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let jitter = |rng: &mut ChaCha8Rng, v: &DVector<f64>| v.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect::<Vec<_>>();
    (0..n).map(|_| (jitter(rng, &m.uop), jitter(rng, &m.yop), jitter(rng, &m.dop))).collect()
}

/// Feeds the signals through `est` and returns the corrected estimates.
pub fn run_estimator(est: &mut StateEstimator, sig: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> Vec<DVector<f64>> {
    sig.iter()
        .map(|(u, y, d)| {
            let x = est.prepare(y, d).unwrap();
            est.update(u, y, d).unwrap();
            x
        })
        .collect()
}

pub fn max_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// Strictly convex QP with `n` variables and `m` inequalities that has a
/// strictly feasible point, with a linear term pushing the unconstrained
/// minimum outside the feasible set.
pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QpProblem {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let b = &a * &z0 + DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0));
    QpProblem::new(h, q, a, b).unwrap()
}

/// Minimizer found by enumerating candidate active sets in order of size and
/// keeping the first one whose equality-constrained solution is primal and
/// dual feasible. Returns `(z, λ)`.
pub fn enumerate_qp(p: &QpProblem) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, m) = (p.n(), p.m());
    let mut set: Vec<usize> = Vec::new();
    for size in 0..=n.min(m) {
        if let Some(hit) = combos(m, size, 0, &mut set, &mut |s| try_active(p, s)) {
            return Some(hit);
        }
    }
    None
}

fn combos<F>(m: usize, size: usize, start: usize, set: &mut Vec<usize>, f: &mut F) -> Option<(DVector<f64>, DVector<f64>)>
where
    F: FnMut(&[usize]) -> Option<(DVector<f64>, DVector<f64>)>,
{
    if set.len() == size {
        return f(set);
    }
    for i in start..m {
        set.push(i);
        let hit = combos(m, size, i + 1, set, f);
        set.pop();
        if hit.is_some() {
            return hit;
        }
    }
    None
}

fn try_active(p: &QpProblem, s: &[usize]) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, k) = (p.n(), s.len());
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for i in 0..n {
        rhs[i] = -p.q[i];
    }
    for (j, &r) in s.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = p.a_ineq[(r, c)];
            kkt[(c, n + j)] = p.a_ineq[(r, c)];
        }
        rhs[n + j] = p.b_ineq[r];
    }
    let lu = kkt.lu();
    let sol = lu.solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let z = sol.rows(0, n).into_owned();
    let mut lambda = DVector::zeros(p.m());
    for (j, &r) in s.iter().enumerate() {
        lambda[r] = sol[n + j];
    }
    let primal_ok = (0..p.m()).all(|i| p.a_ineq.row(i).transpose().dot(&z) <= p.b_ineq[i] + 1e-9);
    let dual_ok = lambda.iter().all(|&l| l >= -1e-9);
    (primal_ok && dual_ok).then_some((z, lambda))
}

/// `½ zᵀHz + qᵀz` as a smooth program.
pub struct Quadratic<'a>(pub &'a QpProblem);

impl Nlp for Quadratic<'_> {
    fn eval<T: ModelScalar>(&self, z: &[T], _g: &mut [T]) -> T {
        let p = self.0;
        let mut f = T::zero();
        for i in 0..z.len() {
            let mut hz = T::zero();
            for j in 0..z.len() {
                hz = hz + z[j] * p.h[(i, j)];
            }
            f = f + z[i] * (hz * 0.5 + p.q[i]);
        }
        f
    }
}

//! Sequential quadratic programming for smooth problems with box bounds,
//! affine inequalities and optional smooth nonlinear inequalities `g(z) ≤ 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpProblem, QpStatus};
use crate::autodiff::{hessian, Dual8, HyperDual8, Real, CHUNK};
use crate::error::{check_len, Error, Result};
use crate::linalg::symmetrize;
use crate::model::ModelScalar;

/// Objective and nonlinear constraints, evaluated for any model scalar so that
/// derivatives come from forward-mode differentiation.
pub trait Nlp {
    /// Number of nonlinear inequality values written by [`Nlp::eval`].
    fn n_nonlinear(&self) -> usize {
        0
    }

    /// Returns the objective and writes `g(z)` (feasible when `≤ 0`).
    fn eval<T: ModelScalar>(&self, z: &[T], g: &mut [T]) -> T;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HessianInit {
    /// Exact objective Hessian at the first iterate, made positive definite.
    Exact,
    /// Identity scaled by the gradient norm at the first iterate.
    ScaledIdentity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqpOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub hessian: HessianInit,
}

impl Default for SqpOptions {
    fn default() -> Self {
        SqpOptions {
            max_iter: 100,
            tol: 1e-6,
            hessian: HessianInit::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlpProblem {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub z0: DVector<f64>,
    pub options: SqpOptions,
}

impl NlpProblem {
    pub fn new(z0: DVector<f64>) -> Self {
        let n = z0.len();
        NlpProblem {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            z0,
            options: SqpOptions::default(),
        }
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_len("lower bounds", self.z0.len(), lower.len())?;
        check_len("upper bounds", self.z0.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(Error::InvalidArgument("lower bound above upper bound".into()));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn with_affine(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_len("affine columns", self.z0.len(), a.ncols())?;
        check_len("affine bounds", a.nrows(), b.len())?;
        self.a_ineq = a;
        self.b_ineq = b;
        Ok(self)
    }

    pub fn with_options(mut self, options: SqpOptions) -> Self {
        self.options = options;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NlpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NlpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: NlpStatus,
    pub iterations: usize,
    /// Merit value after every accepted step, starting at the initial point.
    pub merit: Vec<f64>,
}

struct Point {
    z: DVector<f64>,
    f: f64,
    grad: DVector<f64>,
    g: DVector<f64>,
    jac: DMatrix<f64>,
}

fn eval_value<P: Nlp>(nlp: &P, z: &DVector<f64>) -> (f64, DVector<f64>) {
    let mut g = vec![0.0; nlp.n_nonlinear()];
    let f = nlp.eval::<f64>(z.as_slice(), &mut g);
    (f, DVector::from_vec(g))
}

fn eval_point<P: Nlp>(nlp: &P, z: &DVector<f64>) -> Result<Point> {
    let n = z.len();
    let ng = nlp.n_nonlinear();
    let mut grad = DVector::zeros(n);
    let mut jac = DMatrix::zeros(ng, n);
    let mut f;
    let mut gval = DVector::zeros(ng);
    let mut seeded: Vec<Dual8> = z.iter().map(|&v| Dual8::from_f64(v)).collect();
    let mut gbuf = vec![Dual8::zero(); ng];
    let mut start = 0;
    loop {
        let width = CHUNK.min(n - start);
        for (j, s) in seeded.iter_mut().enumerate() {
            s.eps = [0.0; CHUNK];
            if j >= start && j < start + width {
                s.eps[j - start] = 1.0;
            }
        }
        let out = nlp.eval::<Dual8>(&seeded, &mut gbuf);
        f = out.re;
        for k in 0..width {
            grad[start + k] = out.eps[k];
            for (i, gi) in gbuf.iter().enumerate() {
                jac[(i, start + k)] = gi.eps[k];
            }
        }
        for (i, gi) in gbuf.iter().enumerate() {
            gval[i] = gi.re;
        }
        start += width;
        if start >= n {
            break;
        }
    }
    if !f.is_finite() || !gval.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("objective"));
    }
    if !grad.iter().chain(jac.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("objective gradient"));
    }
    Ok(Point { z: z.clone(), f, grad, g: gval, jac })
}

/// Total violation of all constraints at `z`.
fn violation(p: &NlpProblem, z: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let mut v = 0.0;
    for i in 0..z.len() {
        v += (p.lower[i] - z[i]).max(0.0) + (z[i] - p.upper[i]).max(0.0);
    }
    for i in 0..p.b_ineq.len() {
        v += (p.a_ineq.row(i).dot(&z.transpose()) - p.b_ineq[i]).max(0.0);
    }
    v + g.iter().map(|&gi| gi.max(0.0)).sum::<f64>()
}

fn positive_definite(mut b: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut b);
    let eig = b.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax().max(1.0);
    let floor = 1e-8 * top;
    if eig.eigenvalues.min() >= floor {
        return b;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

pub fn solve_nlp<P: Nlp>(nlp: &P, p: &NlpProblem) -> Result<NlpSolution> {
    let n = p.z0.len();
    check_len("lower bounds", n, p.lower.len())?;
    check_len("upper bounds", n, p.upper.len())?;
    check_len("affine columns", n, p.a_ineq.ncols())?;
    let ng = nlp.n_nonlinear();
    let opts = p.options;

    let z0 = DVector::from_iterator(n, (0..n).map(|i| p.z0[i].clamp(p.lower[i], p.upper[i])));
    let mut cur = eval_point(nlp, &z0)?;
    let mut b = match opts.hessian {
        HessianInit::Exact => {
            let (_, _, h) = hessian(
                |z: &[HyperDual8]| {
                    let mut g = vec![HyperDual8::zero(); ng];
                    nlp.eval::<HyperDual8>(z, &mut g)
                },
                z0.as_slice(),
            )?;
            if h.iter().all(|v| v.is_finite()) {
                positive_definite(h)
            } else {
                DMatrix::identity(n, n) * cur.grad.norm().max(1.0)
            }
        }
        HessianInit::ScaledIdentity => DMatrix::identity(n, n) * cur.grad.norm().max(1.0),
    };

    // Constant row layout so the active set can be carried between iterations.
    let upper_rows: Vec<usize> = (0..n).filter(|&i| p.upper[i].is_finite()).collect();
    let lower_rows: Vec<usize> = (0..n).filter(|&i| p.lower[i].is_finite()).collect();
    let m_aff = p.b_ineq.len();
    let m = upper_rows.len() + lower_rows.len() + m_aff + ng;
    let mut a = DMatrix::zeros(m, n);
    for (r, &i) in upper_rows.iter().enumerate() {
        a[(r, i)] = 1.0;
    }
    for (r, &i) in lower_rows.iter().enumerate() {
        a[(upper_rows.len() + r, i)] = -1.0;
    }
    let off_aff = upper_rows.len() + lower_rows.len();
    let off_nl = off_aff + m_aff;
    a.view_mut((off_aff, 0), (m_aff, n)).copy_from(&p.a_ineq);

    let mut mu: f64 = 0.0;
    let merit_of = |f: f64, viol: f64, mu: f64| f + mu * viol;
    let mut merit = vec![merit_of(cur.f, violation(p, &cur.z, &cur.g), mu)];
    let mut active: Vec<usize> = Vec::new();
    // Stationarity is judged against the gradient size at the start, since the
    // gradient itself vanishes at an interior optimum.
    let kkt_scale = cur.grad.amax().max(1.0);

    for iter in 1..=opts.max_iter {
        let mut rhs = DVector::zeros(m);
        for (r, &i) in upper_rows.iter().enumerate() {
            rhs[r] = p.upper[i] - cur.z[i];
        }
        for (r, &i) in lower_rows.iter().enumerate() {
            rhs[upper_rows.len() + r] = cur.z[i] - p.lower[i];
        }
        for r in 0..m_aff {
            rhs[off_aff + r] = p.b_ineq[r] - p.a_ineq.row(r).dot(&cur.z.transpose());
        }
        for r in 0..ng {
            a.row_mut(off_nl + r).copy_from(&cur.jac.row(r));
            rhs[off_nl + r] = -cur.g[r];
        }
        let qp = QpProblem::new(b.clone(), cur.grad.clone(), a.clone(), rhs)?;
        let sol = solve_qp(&qp, Some(&active))?;
        match sol.status {
            QpStatus::Optimal | QpStatus::MaxIterations if sol.z.iter().all(|v| v.is_finite()) => {}
            _ => {
                return Ok(NlpSolution {
                    objective: cur.f,
                    z: cur.z,
                    status: NlpStatus::Infeasible,
                    iterations: iter,
                    merit,
                })
            }
        }
        active = sol.active_set.clone();
        let step = sol.z;
        let lam_nl = sol.lambda.rows(off_nl, ng).into_owned();

        // Lagrangian stationarity at the current point with the QP multipliers.
        let lag = &cur.grad + a.transpose() * &sol.lambda;
        let viol_cur = violation(p, &cur.z, &cur.g);
        let kkt = lag.amax().max(viol_cur);
        let step_tol = opts.tol * (1.0 + cur.z.amax());
        // Predicted decrease below what the objective can resolve in floating point.
        let flat = -cur.grad.dot(&step) <= 1e-13 * (1.0 + cur.f.abs()) && viol_cur <= opts.tol;
        if (step.amax() <= step_tol && kkt <= opts.tol * kkt_scale) || flat {
            let z = DVector::from_iterator(n, (0..n).map(|i| (cur.z[i] + step[i]).clamp(p.lower[i], p.upper[i])));
            let (f, g) = eval_value(nlp, &z);
            let (z, f) = if f.is_finite() && merit_of(f, violation(p, &z, &g), mu) <= *merit.last().unwrap() + opts.tol * kkt_scale {
                (z, f)
            } else {
                (cur.z, cur.f)
            };
            return Ok(NlpSolution {
                z,
                objective: f,
                status: NlpStatus::Optimal,
                iterations: iter,
                merit,
            });
        }

        mu = mu.max(1.5 * sol.lambda.amax() + 1e-8);
        let phi0 = merit_of(cur.f, viol_cur, mu);
        let slope = cur.grad.dot(&step) - mu * viol_cur;
        let mut alpha = 1.0;
        let accepted = loop {
            let z = DVector::from_iterator(n, (0..n).map(|i| (cur.z[i] + alpha * step[i]).clamp(p.lower[i], p.upper[i])));
            let (f, g) = eval_value(nlp, &z);
            if f.is_finite() && g.iter().all(|v| v.is_finite()) {
                let phi = merit_of(f, violation(p, &z, &g), mu);
                if phi <= phi0 + 1e-4 * alpha * slope.min(0.0) {
                    break Some(z);
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                break None;
            }
        };
        let Some(z_new) = accepted else {
            return Ok(NlpSolution {
                objective: cur.f,
                z: cur.z,
                status: NlpStatus::MaxIterations,
                iterations: iter,
                merit,
            });
        };
        let next = eval_point(nlp, &z_new)?;

        // Damped BFGS on the Lagrangian gradient difference.
        let s = &next.z - &cur.z;
        let mut y = &next.grad - &cur.grad;
        if ng > 0 {
            y += (&next.jac - &cur.jac).transpose() * &lam_nl;
        }
        let bs = &b * &s;
        let sbs = s.dot(&bs);
        if sbs > 1e-300 && s.amax() > 0.0 {
            let sy = s.dot(&y);
            let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
            let r = &y * theta + &bs * (1.0 - theta);
            let sr = s.dot(&r);
            if sr > 0.0 {
                b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
                symmetrize(&mut b);
            }
        }
        merit.push(merit_of(next.f, violation(p, &next.z, &next.g), mu));
        cur = next;
    }
    Ok(NlpSolution {
        objective: cur.f,
        z: cur.z,
        status: NlpStatus::MaxIterations,
        iterations: opts.max_iter,
        merit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Shifted;
    impl Nlp for Shifted {
        fn eval<T: ModelScalar>(&self, z: &[T], _g: &mut [T]) -> T {
            (z[0] - 3.0) * (z[0] - 3.0)
        }
    }

    struct Rosenbrock;
    impl Nlp for Rosenbrock {
        fn eval<T: ModelScalar>(&self, z: &[T], _g: &mut [T]) -> T {
            let a = -z[0] + 1.0;
            let b = z[1] - z[0] * z[0];
            a * a + b * b * 100.0
        }
    }

    struct Disk;
    impl Nlp for Disk {
        fn n_nonlinear(&self) -> usize {
            1
        }
        fn eval<T: ModelScalar>(&self, z: &[T], g: &mut [T]) -> T {
            g[0] = z[0] * z[0] + z[1] * z[1] - 1.0;
            -(z[0] + z[1])
        }
    }

    #[test]
    fn box_interior_minimum() {
        let p = NlpProblem::new(DVector::from_vec(vec![-7.0]))
            .with_bounds(DVector::from_vec(vec![-10.0]), DVector::from_vec(vec![10.0]))
            .unwrap();
        let s = solve_nlp(&Shifted, &p).unwrap();
        assert_eq!(s.status, NlpStatus::Optimal);
        assert!((s.z[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn active_box_bound() {
        let p = NlpProblem::new(DVector::from_vec(vec![0.0]))
            .with_bounds(DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![2.0]))
            .unwrap();
        let s = solve_nlp(&Shifted, &p).unwrap();
        assert!((s.z[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        for init in [HessianInit::Exact, HessianInit::ScaledIdentity] {
            let opts = SqpOptions { hessian: init, ..Default::default() };
            let p = NlpProblem::new(DVector::from_vec(vec![-1.2, 1.0])).with_options(opts);
            let s = solve_nlp(&Rosenbrock, &p).unwrap();
            assert_eq!(s.status, NlpStatus::Optimal, "{init:?}");
            assert!((s.z[0] - 1.0).abs() < 1e-5 && (s.z[1] - 1.0).abs() < 1e-5, "{init:?} {:?}", s.z);
            let g = crate::autodiff::gradient::<CHUNK, _>(|z| Rosenbrock.eval(z, &mut []), s.z.as_slice()).unwrap();
            assert!(g.amax() < 1e-4);
            assert!(s.merit.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn nonlinear_inequality() {
        let p = NlpProblem::new(DVector::from_vec(vec![0.0, 0.0]));
        let s = solve_nlp(&Disk, &p).unwrap();
        let r = 0.5f64.sqrt();
        assert_eq!(s.status, NlpStatus::Optimal);
        assert!((s.z[0] - r).abs() < 1e-6 && (s.z[1] - r).abs() < 1e-6, "{:?}", s.z);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        struct Bad;
        impl Nlp for Bad {
            fn eval<T: ModelScalar>(&self, z: &[T], _g: &mut [T]) -> T {
                z[0].ln()
            }
        }
        let p = NlpProblem::new(DVector::from_vec(vec![-1.0]));
        assert!(solve_nlp(&Bad, &p).is_err());
    }
}

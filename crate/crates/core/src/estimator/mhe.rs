//! Moving-horizon estimation over a window of the last `Nk = min(k+1, He)`
//! measurements.
//!
//! Decisions are the state at the start of the window, the process noise on
//! every window transition and, when constraints are soft, one slack `ε`.
//! The arrival prior is the one-step prediction made when the window's first
//! sample was the newest, with its Kalman covariance, so the unconstrained
//! linear problem returns exactly the Kalman filter estimate.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::augment::{select_rows, Augmented};
use crate::autodiff::quad_form;
use crate::error::{check_len, Error, Result};
use crate::linalg::spd_inverse;
use crate::model::{ModelScalar, SimModel};
use crate::optim::{solve_nlp, solve_qp, Nlp, NlpProblem, NlpStatus, QpProblem};

/// Bounds on estimated states (absolute), process noise and sensor noise.
#[derive(Clone, Debug, PartialEq)]
pub struct MheBounds {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub w_min: Vec<f64>,
    pub w_max: Vec<f64>,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    /// Softness of each bound; only used when the slack weight is finite.
    pub c_x_min: Vec<f64>,
    pub c_x_max: Vec<f64>,
    pub c_w_min: Vec<f64>,
    pub c_w_max: Vec<f64>,
    pub c_v_min: Vec<f64>,
    pub c_v_max: Vec<f64>,
}

impl MheBounds {
    pub fn unbounded(nx_hat: usize, nym: usize) -> Self {
        let inf = |n| vec![f64::INFINITY; n];
        let ninf = |n| vec![f64::NEG_INFINITY; n];
        MheBounds {
            x_min: ninf(nx_hat),
            x_max: inf(nx_hat),
            w_min: ninf(nx_hat),
            w_max: inf(nx_hat),
            v_min: ninf(nym),
            v_max: inf(nym),
            c_x_min: vec![1.0; nx_hat],
            c_x_max: vec![1.0; nx_hat],
            c_w_min: vec![1.0; nx_hat],
            c_w_max: vec![1.0; nx_hat],
            c_v_min: vec![1.0; nym],
            c_v_max: vec![1.0; nym],
        }
    }

    pub(crate) fn validate(&self, n: usize, nym: usize) -> Result<()> {
        let sizes = [
            (&self.x_min, n, "x_min"),
            (&self.x_max, n, "x_max"),
            (&self.w_min, n, "w_min"),
            (&self.w_max, n, "w_max"),
            (&self.v_min, nym, "v_min"),
            (&self.v_max, nym, "v_max"),
            (&self.c_x_min, n, "c_x_min"),
            (&self.c_x_max, n, "c_x_max"),
            (&self.c_w_min, n, "c_w_min"),
            (&self.c_w_max, n, "c_w_max"),
            (&self.c_v_min, nym, "c_v_min"),
            (&self.c_v_max, nym, "c_v_max"),
        ];
        for (v, len, what) in sizes {
            check_len(what, len, v.len())?;
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::InvalidArgument(format!("{what} contains NaN")));
            }
        }
        for (lo, hi, what) in [
            (&self.x_min, &self.x_max, "state"),
            (&self.w_min, &self.w_max, "process noise"),
            (&self.v_min, &self.v_max, "sensor noise"),
        ] {
            if lo.iter().zip(hi).any(|(a, b)| a > b) {
                return Err(Error::InvalidArgument(format!("{what} lower bound exceeds upper bound")));
            }
        }
        let soft = [&self.c_x_min, &self.c_x_max, &self.c_w_min, &self.c_w_max, &self.c_v_min, &self.c_v_max];
        if soft.iter().any(|v| v.iter().any(|&c| !(c >= 0.0 && c.is_finite()))) {
            return Err(Error::InvalidArgument("softness values must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One sample of the estimation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    /// One-step prediction of the state at this sample (estimation coordinates).
    pub x_prior: Vec<f64>,
    pub p_prior: Vec<Vec<f64>>,
    pub ym: Vec<f64>,
    pub d: Vec<f64>,
    /// Input applied at this sample, once known.
    pub u: Option<Vec<f64>>,
}

/// Result of the latest window solve.
#[derive(Clone, Debug, PartialEq)]
pub struct MheInfo {
    pub nk: usize,
    /// Estimated states over the window, oldest first.
    pub x: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub eps: f64,
    pub objective: f64,
    pub optimal: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct Mhe {
    he: usize,
    cwt: f64,
    window: VecDeque<WindowRecord>,
    pub(crate) bounds: MheBounds,
    info: Option<MheInfo>,
}

fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn rows_mat(rows: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Shared data of one window problem.
struct Window<'a> {
    aug: &'a Augmented,
    recs: Vec<&'a WindowRecord>,
    xbar: DVector<f64>,
    p_inv: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    bounds: &'a MheBounds,
    cwt: f64,
    /// Offset between estimation and absolute coordinates.
    x_off: DVector<f64>,
}

impl Window<'_> {
    fn n(&self) -> usize {
        self.xbar.len()
    }

    fn nk(&self) -> usize {
        self.recs.len()
    }

    fn soft(&self) -> bool {
        self.cwt.is_finite()
    }

    fn nz(&self) -> usize {
        self.n() * self.nk() + usize::from(self.soft())
    }
}


/// Nonlinear window problem with bounds on states and noises as `g ≤ 0`.
struct MheNlp<'a> {
    w: Window<'a>,
    n_g: usize,
}

impl MheNlp<'_> {
    fn count_rows(w: &Window) -> usize {
        let fin = |v: &[f64]| v.iter().filter(|x| x.is_finite()).count();
        let b = w.bounds;
        let nk = w.nk();
        nk * (fin(&b.x_min) + fin(&b.x_max) + fin(&b.v_min) + fin(&b.v_max)) + (nk - 1) * (fin(&b.w_min) + fin(&b.w_max))
    }

    /// Writes the bound rows of vector `val` and returns the next row index.
    fn push_bounds<T: ModelScalar>(g: &mut [T], mut row: usize, val: &[T], lo: &[f64], hi: &[f64], clo: &[f64], chi: &[f64], eps: T) -> usize {
        for i in 0..val.len() {
            if lo[i].is_finite() {
                g[row] = T::from_f64(lo[i]) - val[i] - eps * clo[i];
                row += 1;
            }
            if hi[i].is_finite() {
                g[row] = val[i] - hi[i] - eps * chi[i];
                row += 1;
            }
        }
        row
    }
}

impl Nlp for MheNlp<'_> {
    fn n_nonlinear(&self) -> usize {
        self.n_g
    }

    fn eval<T: ModelScalar>(&self, z: &[T], g: &mut [T]) -> T {
        let w = &self.w;
        let n = w.n();
        let nk = w.nk();
        let b = w.bounds;
        let eps = if w.soft() { z[n * nk] } else { T::zero() };
        let mut x: Vec<T> = z[..n].to_vec();
        let dx: Vec<T> = (0..n).map(|i| x[i] - w.xbar[i]).collect();
        let mut cost = quad_form(&dx, &w.p_inv);
        let nym = w.aug.nym();
        let ny = w.aug.ny();
        let mut y = vec![T::zero(); ny];
        let mut next = vec![T::zero(); n];
        let mut row = 0;
        for (j, rec) in w.recs.iter().enumerate() {
            let d: Vec<T> = rec.d.iter().map(|&v| T::from_f64(v)).collect();
            w.aug.h_hat(&mut y, &x, &d);
            let v: Vec<T> = w.aug.i_ym().iter().enumerate().map(|(k, &i)| T::from_f64(rec.ym[k]) - y[i]).collect();
            debug_assert_eq!(v.len(), nym);
            cost += quad_form(&v, &w.r_inv);
            let xa: Vec<T> = (0..n).map(|i| x[i] + w.x_off[i]).collect();
            row = Self::push_bounds(g, row, &xa, &b.x_min, &b.x_max, &b.c_x_min, &b.c_x_max, eps);
            row = Self::push_bounds(g, row, &v, &b.v_min, &b.v_max, &b.c_v_min, &b.c_v_max, eps);
            if j + 1 < nk {
                let wj = &z[n * (j + 1)..n * (j + 2)];
                cost += quad_form(wj, &w.q_inv);
                row = Self::push_bounds(g, row, wj, &b.w_min, &b.w_max, &b.c_w_min, &b.c_w_max, eps);
                let u: Vec<T> = rec.u.as_ref().expect("input recorded").iter().map(|&v| T::from_f64(v)).collect();
                w.aug.f_hat(&mut next, &x, &u, &d);
                for i in 0..n {
                    x[i] = next[i] + wj[i];
                }
            }
        }
        debug_assert_eq!(row, self.n_g);
        if w.soft() {
            cost += eps * eps * w.cwt;
        }
        cost
    }
}

impl Mhe {
    pub(crate) fn new(he: usize, cwt: f64, nx_hat: usize, nym: usize) -> Self {
        Mhe {
            he,
            cwt,
            window: VecDeque::with_capacity(he + 1),
            bounds: MheBounds::unbounded(nx_hat, nym),
            info: None,
        }
    }

    pub(crate) fn info(&self) -> Option<&MheInfo> {
        self.info.as_ref()
    }

    pub(crate) fn reset(&mut self) {
        self.window.clear();
        self.info = None;
    }

    pub(crate) fn records(&self) -> Vec<WindowRecord> {
        self.window.iter().cloned().collect()
    }

    pub(crate) fn restore(&mut self, recs: &[WindowRecord], n: usize, nym: usize, nu: usize, nd: usize) -> Result<()> {
        if recs.len() > self.he {
            return Err(Error::InvalidArgument("snapshot window longer than the estimation horizon".into()));
        }
        for r in recs {
            check_len("window state", n, r.x_prior.len())?;
            check_len("window covariance", n, r.p_prior.len())?;
            for row in &r.p_prior {
                check_len("window covariance", n, row.len())?;
            }
            check_len("window ym", nym, r.ym.len())?;
            check_len("window d", nd, r.d.len())?;
            if let Some(u) = &r.u {
                check_len("window u", nu, u.len())?;
            }
        }
        self.window = recs.iter().cloned().collect();
        self.info = None;
        Ok(())
    }

    pub(crate) fn record_input(&mut self, u: &[f64]) {
        if let Some(r) = self.window.back_mut() {
            r.u = Some(u.to_vec());
        }
    }

    pub(crate) fn rebase(&mut self, old: &Augmented, new: &Augmented) {
        for r in self.window.iter_mut() {
            let abs = old.to_absolute(&DVector::from_column_slice(&r.x_prior));
            r.x_prior = new.from_absolute(&abs).iter().copied().collect();
        }
    }

    /// Adds the newest sample and solves the window. `Ok(None)` means the
    /// solver did not reach optimality and the prior should be kept.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn correct(
        &mut self,
        aug: &Augmented,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        x_prior: &DVector<f64>,
        p_prior: &DMatrix<f64>,
        ym: &[f64],
        d: &[f64],
    ) -> Result<Option<DVector<f64>>> {
        self.window.push_back(WindowRecord {
            x_prior: x_prior.iter().copied().collect(),
            p_prior: mat_rows(p_prior),
            ym: ym.to_vec(),
            d: d.to_vec(),
            u: None,
        });
        while self.window.len() > self.he {
            self.window.pop_front();
        }
        let n = x_prior.len();
        let first = &self.window[0];
        let mut x_off = DVector::zeros(n);
        if let Some(m) = aug.base().as_linear() {
            x_off.rows_mut(0, m.nx()).copy_from(&m.xop);
        }
        let w = Window {
            aug,
            recs: self.window.iter().collect(),
            xbar: DVector::from_column_slice(&first.x_prior),
            p_inv: spd_inverse(&rows_mat(&first.p_prior, n))?,
            q_inv: spd_inverse(q)?,
            r_inv: spd_inverse(r)?,
            bounds: &self.bounds,
            cwt: self.cwt,
            x_off,
        };
        let sol = if aug.linear().is_some() { solve_linear(&w) } else { solve_nonlinear(&w) };
        let (z, objective, optimal) = match sol {
            Ok(s) => s,
            Err(e) => {
                log::warn!("moving horizon solve failed: {e}");
                (DVector::from_element(w.nz(), f64::NAN), f64::NAN, false)
            }
        };
        let info = trajectory(&w, &z, objective, optimal && z.iter().all(|v| v.is_finite()));
        let out = if info.optimal {
            Some(info.x.last().expect("nonempty window").clone())
        } else {
            log::warn!("moving horizon estimate kept at its prior");
            None
        };
        self.info = Some(info);
        Ok(out)
    }
}

/// Rebuilds states and noises from a decision vector.
fn trajectory(w: &Window, z: &DVector<f64>, objective: f64, optimal: bool) -> MheInfo {
    let n = w.n();
    let nk = w.nk();
    let mut xs = Vec::with_capacity(nk);
    let mut ws = Vec::with_capacity(nk.saturating_sub(1));
    let mut vs = Vec::with_capacity(nk);
    let mut x = z.rows(0, n).into_owned();
    for (j, rec) in w.recs.iter().enumerate() {
        vs.push(DVector::from_column_slice(&rec.ym) - w.aug.hm_f64(&x, &rec.d));
        xs.push(x.clone());
        if j + 1 < nk {
            let wj = z.rows(n * (j + 1), n).into_owned();
            x = w.aug.f_hat_f64(&x, rec.u.as_deref().expect("input recorded"), &rec.d) + &wj;
            ws.push(wj);
        }
    }
    MheInfo {
        nk,
        x: xs,
        w: ws,
        v: vs,
        eps: if w.soft() { z[n * nk] } else { 0.0 },
        objective,
        optimal,
    }
}

/// Linear windows: states are affine in the decisions, giving a QP.
fn solve_linear(w: &Window) -> Result<(DVector<f64>, f64, bool)> {
    let l = w.aug.linear().expect("linear window");
    let m = w.aug.base().as_linear().expect("linear base");
    let n = w.n();
    let nk = w.nk();
    let nz = w.nz();
    let soft = w.soft();
    let cm = select_rows(&l.c, w.aug.i_ym());
    let ddm = select_rows(&l.dd, w.aug.i_ym());
    let yopm = DVector::from_iterator(w.aug.nym(), w.aug.i_ym().iter().map(|&i| m.yop[i]));

    let mut h = DMatrix::zeros(nz, nz);
    let mut q = DVector::zeros(nz);
    // Residual r = S z − t with weight W adds 2SᵀWS and −2SᵀWt.
    let mut add = |s: &DMatrix<f64>, t: &DVector<f64>, wt: &DMatrix<f64>| {
        let sw = s.transpose() * wt;
        h += &sw * s * 2.0;
        q -= &sw * t * 2.0;
    };
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let b = w.bounds;
    let push = |rows: &mut Vec<(DVector<f64>, f64)>, s: &DMatrix<f64>, t: &DVector<f64>, lo: &[f64], hi: &[f64], clo: &[f64], chi: &[f64]| {
        // Bounds on the affine expression S z + t.
        for i in 0..s.nrows() {
            if hi[i].is_finite() {
                let mut a = s.row(i).transpose().into_owned();
                if soft {
                    a[nz - 1] = -chi[i];
                }
                rows.push((a, hi[i] - t[i]));
            }
            if lo[i].is_finite() {
                let mut a = -s.row(i).transpose();
                if soft {
                    a[nz - 1] = -clo[i];
                }
                rows.push((a, t[i] - lo[i]));
            }
        }
    };

    let mut gx = DMatrix::zeros(n, nz);
    gx.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut fx = DVector::zeros(n);
    add(&gx, &w.xbar, &w.p_inv);
    for (j, rec) in w.recs.iter().enumerate() {
        let dd = DVector::from_column_slice(&rec.d) - &m.dop;
        let ym = DVector::from_column_slice(&rec.ym);
        // v = ym − (Cm x + Ddm dd + yopm) = −Cm G z + (ym − Ddm dd − yopm − Cm f).
        let sv = -(&cm * &gx);
        let tv = &ym - &ddm * &dd - &yopm - &cm * &fx;
        add(&sv, &(-&tv), &w.r_inv);
        push(&mut rows, &gx, &(&fx + &w.x_off), &b.x_min, &b.x_max, &b.c_x_min, &b.c_x_max);
        push(&mut rows, &sv, &tv, &b.v_min, &b.v_max, &b.c_v_min, &b.c_v_max);
        if j + 1 < nk {
            let mut sw = DMatrix::zeros(n, nz);
            sw.view_mut((0, n * (j + 1)), (n, n)).fill_with_identity();
            add(&sw, &DVector::zeros(n), &w.q_inv);
            push(&mut rows, &sw, &DVector::zeros(n), &b.w_min, &b.w_max, &b.c_w_min, &b.c_w_max);
            let du = DVector::from_column_slice(rec.u.as_ref().expect("input recorded")) - &m.uop;
            gx = &l.a * &gx + sw;
            fx = &l.a * &fx + &l.bu * du + &l.bd * dd + &l.bias;
        }
    }
    if soft {
        h[(nz - 1, nz - 1)] += 2.0 * w.cwt;
        let mut a = DVector::zeros(nz);
        a[nz - 1] = -1.0;
        rows.push((a, 0.0));
    }
    let mut a = DMatrix::zeros(rows.len(), nz);
    let mut bv = DVector::zeros(rows.len());
    for (i, (r, v)) in rows.iter().enumerate() {
        a.set_row(i, &r.transpose());
        bv[i] = *v;
    }
    crate::linalg::symmetrize(&mut h);
    let prob = QpProblem::new(h, q, a, bv)?;
    let sol = solve_qp(&prob, None)?;
    let obj = if sol.is_optimal() { 0.5 * sol.z.dot(&(&prob.h * &sol.z)) + prob.q.dot(&sol.z) } else { f64::NAN };
    Ok((sol.z.clone(), obj, sol.is_optimal()))
}

fn solve_nonlinear(w: &Window) -> Result<(DVector<f64>, f64, bool)> {
    let n = w.n();
    let nk = w.nk();
    let nz = w.nz();
    let mut z0 = DVector::zeros(nz);
    z0.rows_mut(0, n).copy_from(&w.xbar);
    let mut lower = DVector::from_element(nz, f64::NEG_INFINITY);
    let upper = DVector::from_element(nz, f64::INFINITY);
    if w.soft() {
        lower[n * nk] = 0.0;
    }
    let n_g = MheNlp::count_rows(w);
    let nlp = MheNlp {
        w: Window {
            aug: w.aug,
            recs: w.recs.clone(),
            xbar: w.xbar.clone(),
            p_inv: w.p_inv.clone(),
            q_inv: w.q_inv.clone(),
            r_inv: w.r_inv.clone(),
            bounds: w.bounds,
            cwt: w.cwt,
            x_off: w.x_off.clone(),
        },
        n_g,
    };
    let prob = NlpProblem::new(z0).with_bounds(lower, upper)?;
    let sol = solve_nlp(&nlp, &prob)?;
    let ok = sol.status == NlpStatus::Optimal;
    Ok((sol.z, sol.objective, ok))
}

//! Condensed linear MPC and its explicit unconstrained variant.
//!
//! Predictions are affine in the move sequence:
//! `Ŷ = E ΔU + F`, `U = S ΔU + T u_prev`, `x̂(k+Hp) = e_x ΔU + f_x`,
//! where `E`, `S`, `e_x` depend only on the model and `F`, `f_x` are the free
//! response from the current estimate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{
    check_prepared, controller_summary, move_matrix, ConstraintSpec, MoveInfo, MoveStatus, MpcConfig, MpcConstraints,
    MpcWeights, Plan, Predictive, Preview,
};
use crate::error::{check_len, Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorKind, StateEstimator};
use crate::linalg::symmetrize;
use crate::model::{LinearModel, SimModel};
use crate::optim::{solve_qp, QpProblem};

#[derive(Clone, Debug)]
pub(crate) struct LinearCore {
    pub(crate) hp: usize,
    pub(crate) hc: usize,
    pub(crate) weights: MpcWeights,
    pub(crate) s: DMatrix<f64>,
    pub(crate) e: DMatrix<f64>,
    pub(crate) ex: DMatrix<f64>,
    /// Hessian over `ΔU` only.
    pub(crate) h: DMatrix<f64>,
}

impl LinearCore {
    pub(crate) fn new(est: &StateEstimator, cfg: &MpcConfig) -> Result<Self> {
        let aug = est.model();
        if aug.linear().is_none() {
            return Err(Error::Unsupported("a linear controller needs an estimator over a linear model".into()));
        }
        let weights = MpcWeights::build(cfg, aug.nu(), aug.ny())?;
        let mut core = LinearCore {
            hp: cfg.hp,
            hc: cfg.hc,
            weights,
            s: move_matrix(cfg.hp, cfg.hc, aug.nu()),
            e: DMatrix::zeros(0, 0),
            ex: DMatrix::zeros(0, 0),
            h: DMatrix::zeros(0, 0),
        };
        core.rebuild(est);
        Ok(core)
    }

    /// Recomputes the model-dependent matrices.
    pub(crate) fn rebuild(&mut self, est: &StateEstimator) {
        let aug = est.model();
        let l = aug.linear().expect("linear model");
        let (n, nu, ny) = (aug.nx_hat(), aug.nu(), aug.ny());
        let ndu = self.hc * nu;
        let mut e = DMatrix::zeros(self.hp * ny, ndu);
        let mut pu = DMatrix::zeros(n, ndu);
        for j in 0..self.hp {
            pu = &l.a * &pu + &l.bu * self.s.rows(j * nu, nu);
            e.rows_mut(j * ny, ny).copy_from(&(&l.c * &pu));
        }
        let w = &self.weights;
        let mut h = (e.transpose() * &w.m_hp * &e + &w.n_hc + self.s.transpose() * &w.l_hp * &self.s) * 2.0;
        symmetrize(&mut h);
        self.e = e;
        self.ex = pu;
        self.h = h;
    }

    pub(crate) fn ndu(&self) -> usize {
        self.s.ncols()
    }

    /// Free response `(F, f_x)` with all future moves at zero.
    pub(crate) fn free(&self, est: &StateEstimator, u_prev: &DVector<f64>, d: &[f64], dhat: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let aug = est.model();
        let l = aug.linear().expect("linear model");
        let m = aug.base().as_linear().expect("linear model");
        let (ny, nd) = (aug.ny(), aug.nd());
        let bias = est.output_bias();
        let du = u_prev - &m.uop;
        let drive = &l.bu * du + &l.bias;
        let mut x = est.estimate_internal().clone();
        let mut f = DVector::zeros(self.hp * ny);
        let mut dk = DVector::from_column_slice(d) - &m.dop;
        for j in 0..self.hp {
            x = &l.a * &x + &drive + &l.bd * &dk;
            dk = dhat.rows(j * nd, nd) - &m.dop;
            let y = &l.c * &x + &l.dd * &dk + &m.yop + bias;
            f.rows_mut(j * ny, ny).copy_from(&y);
        }
        (f, x)
    }

    /// Linear term of the objective over `ΔU`.
    pub(crate) fn gradient(&self, f: &DVector<f64>, ry: &DVector<f64>, ru: &DVector<f64>, u_prev: &DVector<f64>) -> DVector<f64> {
        let w = &self.weights;
        let tu = self.hold(u_prev);
        -(self.e.transpose() * (&w.m_hp * (ry - f)) + self.s.transpose() * (&w.l_hp * (ru - tu))) * 2.0
    }

    /// `T u_prev`: the previous input repeated over `Hp`.
    pub(crate) fn hold(&self, u_prev: &DVector<f64>) -> DVector<f64> {
        let nu = u_prev.len();
        DVector::from_fn(self.hp * nu, |i, _| u_prev[i % nu])
    }

    pub(crate) fn cost(&self, du: &DVector<f64>, eps: f64, yhat: &DVector<f64>, ry: &DVector<f64>, ru: &DVector<f64>, u_prev: &DVector<f64>) -> f64 {
        let w = &self.weights;
        let ey = ry - yhat;
        let eu = ru - (&self.s * du + self.hold(u_prev));
        let mut j = ey.dot(&(&w.m_hp * &ey)) + du.dot(&(&w.n_hc * du)) + eu.dot(&(&w.l_hp * &eu));
        if w.has_slack() {
            j += w.cwt * eps * eps;
        }
        j
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Group {
    U,
    Du,
    Y,
    X,
    Eps,
}

/// One finite constraint row `a z ≤ b`.
#[derive(Clone, Copy, Debug)]
struct Row {
    group: Group,
    idx: usize,
    upper: bool,
}

/// Linear MPC solved as a QP with the active-set solver.
#[derive(Clone, Debug)]
pub struct LinMpc {
    est: StateEstimator,
    core: LinearCore,
    con: MpcConstraints,
    rows: Vec<Row>,
    a: DMatrix<f64>,
    h: DMatrix<f64>,
    plan: Plan,
    warm: Option<Vec<usize>>,
}

/// Default estimator of the linear controllers.
pub(crate) fn default_linear_estimator(model: LinearModel) -> Result<StateEstimator> {
    StateEstimator::new(EstimatorKind::SteadyKalman, model, &EstimatorConfig::default())
}

impl LinMpc {
    pub fn new(est: StateEstimator, cfg: &MpcConfig) -> Result<Self> {
        let core = LinearCore::new(&est, cfg)?;
        let aug = est.model();
        let con = MpcConstraints::unbounded(aug.nu(), aug.ny(), aug.nx_hat(), cfg.hp, cfg.hc);
        let plan = Plan::new(aug.base().uop(), cfg.hc);
        let mut mpc = LinMpc {
            est,
            core,
            con,
            rows: Vec::new(),
            a: DMatrix::zeros(0, 0),
            h: DMatrix::zeros(0, 0),
            plan,
            warm: None,
        };
        mpc.rebuild_qp();
        Ok(mpc)
    }

    /// Builds the controller with a steady-state Kalman filter.
    pub fn with_default_estimator(model: LinearModel, cfg: &MpcConfig) -> Result<Self> {
        Self::new(default_linear_estimator(model)?, cfg)
    }

    pub fn constraints(&self) -> &MpcConstraints {
        &self.con
    }

    pub fn weights(&self) -> &MpcWeights {
        &self.core.weights
    }

    /// Number of decision variables.
    pub fn nz(&self) -> usize {
        self.core.ndu() + usize::from(self.core.weights.has_slack())
    }

    /// Number of finite constraint rows, slack positivity included.
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Matrices `(E, S, e_x)` of the affine predictions.
    pub fn prediction_matrices(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.core.e, &self.core.s, &self.core.ex)
    }

    /// Free response for the current estimate and previous input.
    pub fn free_response(&self, preview: &Preview) -> Result<(DVector<f64>, DVector<f64>)> {
        let aug = self.est.model();
        let (_, dhat, _) = preview.expand(self.core.hp, aug.ny(), aug.nd(), aug.base().uop())?;
        Ok(self.core.free(&self.est, &self.plan.u_prev, &preview.d, &dhat))
    }

    pub fn set_constraints(&mut self, spec: &ConstraintSpec) -> Result<()> {
        let aug = self.est.model();
        self.con = self.con.updated(spec, aug.nu(), aug.ny(), aug.nx_hat(), self.core.hp, self.core.hc)?;
        self.rebuild_qp();
        Ok(())
    }

    /// Swaps the plant model; the estimator must support it.
    pub fn set_model(&mut self, model: LinearModel) -> Result<()> {
        self.est.set_model(model)?;
        self.core.rebuild(&self.est);
        self.rebuild_qp();
        Ok(())
    }

    fn rebuild_qp(&mut self) {
        let core = &self.core;
        let slack = core.weights.has_slack();
        let ndu = core.ndu();
        let nz = self.nz();
        let c = &self.con;
        let mut rows = Vec::new();
        let mut push = |group, lo: &DVector<f64>, hi: &DVector<f64>| {
            for idx in 0..lo.len() {
                if hi[idx].is_finite() {
                    rows.push(Row { group, idx, upper: true });
                }
                if lo[idx].is_finite() {
                    rows.push(Row { group, idx, upper: false });
                }
            }
        };
        push(Group::U, &c.u_min, &c.u_max);
        push(Group::Du, &c.du_min, &c.du_max);
        push(Group::Y, &c.y_min, &c.y_max);
        push(Group::X, &c.x_min, &c.x_max);
        if slack {
            rows.push(Row { group: Group::Eps, idx: 0, upper: false });
        }
        let mut a = DMatrix::zeros(rows.len(), nz);
        for (r, row) in rows.iter().enumerate() {
            let sign = if row.upper { 1.0 } else { -1.0 };
            let (coef, soft) = match row.group {
                Group::U => (core.s.row(row.idx).into_owned(), if row.upper { c.c_u_max[row.idx] } else { c.c_u_min[row.idx] }),
                Group::Du => {
                    let mut v = nalgebra::RowDVector::zeros(ndu);
                    v[row.idx] = 1.0;
                    (v, if row.upper { c.c_du_max[row.idx] } else { c.c_du_min[row.idx] })
                }
                Group::Y => (core.e.row(row.idx).into_owned(), if row.upper { c.c_y_max[row.idx] } else { c.c_y_min[row.idx] }),
                Group::X => (core.ex.row(row.idx).into_owned(), if row.upper { c.c_x_max[row.idx] } else { c.c_x_min[row.idx] }),
                Group::Eps => {
                    a[(r, nz - 1)] = -1.0;
                    continue;
                }
            };
            a.view_mut((r, 0), (1, ndu)).copy_from(&(coef * sign));
            if slack {
                a[(r, nz - 1)] = -soft;
            }
        }
        let mut h = DMatrix::zeros(nz, nz);
        h.view_mut((0, 0), (ndu, ndu)).copy_from(&core.h);
        if slack {
            h[(nz - 1, nz - 1)] = 2.0 * core.weights.cwt;
        }
        self.rows = rows;
        self.a = a;
        self.h = h;
        self.warm = None;
    }

    fn rhs(&self, f: &DVector<f64>, fx: &DVector<f64>) -> DVector<f64> {
        let c = &self.con;
        let tu = self.core.hold(&self.plan.u_prev);
        let aug = self.est.model();
        let mut x_abs = fx.clone();
        let nx = aug.nx();
        if let Some(m) = aug.base().as_linear() {
            x_abs.rows_mut(0, nx).zip_apply(&m.xop, |a, b| *a += b);
        }
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| {
                let (lo, hi, off) = match row.group {
                    Group::U => (c.u_min[row.idx], c.u_max[row.idx], tu[row.idx]),
                    Group::Du => (c.du_min[row.idx], c.du_max[row.idx], 0.0),
                    Group::Y => (c.y_min[row.idx], c.y_max[row.idx], f[row.idx]),
                    Group::X => (c.x_min[row.idx], c.x_max[row.idx], x_abs[row.idx]),
                    Group::Eps => return 0.0,
                };
                if row.upper {
                    hi - off
                } else {
                    off - lo
                }
            }),
        )
    }
}

/// Clamps the first move into the hard input bounds after a failed solve.
fn clamp_first(u: &mut DVector<f64>, con: &MpcConstraints) {
    for i in 0..u.len() {
        u[i] = u[i].max(con.u_min[i]).min(con.u_max[i]);
    }
}

impl Predictive for LinMpc {
    fn estimator(&self) -> &StateEstimator {
        &self.est
    }
    fn estimator_mut(&mut self) -> &mut StateEstimator {
        &mut self.est
    }
    fn hp(&self) -> usize {
        self.core.hp
    }
    fn hc(&self) -> usize {
        self.core.hc
    }
    fn name(&self) -> &'static str {
        "LinMPC"
    }
    fn last_input(&self) -> &DVector<f64> {
        &self.plan.u_prev
    }
    fn set_last_input(&mut self, u: &[f64]) -> Result<()> {
        check_len("u", self.plan.nu, u.len())?;
        self.plan.u_prev = DVector::from_column_slice(u);
        Ok(())
    }

    fn move_input(&mut self, preview: &Preview) -> Result<MoveInfo> {
        check_prepared(&self.est)?;
        let aug = self.est.model();
        let (ry, dhat, ru) = preview.expand(self.core.hp, aug.ny(), aug.nd(), aug.base().uop())?;
        let (f, fx) = self.core.free(&self.est, &self.plan.u_prev, &preview.d, &dhat);
        let ndu = self.core.ndu();
        let nz = self.nz();
        let mut q = DVector::zeros(nz);
        q.rows_mut(0, ndu).copy_from(&self.core.gradient(&f, &ry, &ru, &self.plan.u_prev));
        let b = self.rhs(&f, &fx);
        let prob = QpProblem::new(self.h.clone(), q, self.a.clone(), b)?;
        let sol = solve_qp(&prob, self.warm.as_deref())?;
        let (du, eps, status) = if sol.is_optimal() {
            let eps = if nz > ndu { sol.z[nz - 1] } else { 0.0 };
            self.warm = Some(sol.active_set.clone());
            (sol.z.rows(0, ndu).into_owned(), eps, MoveStatus::Optimal)
        } else {
            log::warn!("QP not solved ({:?}); applying the shifted previous plan", sol.status);
            self.warm = None;
            (self.plan.shifted(), 0.0, MoveStatus::Fallback)
        };
        let nu = self.plan.nu;
        let mut u = &self.plan.u_prev + du.rows(0, nu);
        if status == MoveStatus::Fallback {
            clamp_first(&mut u, &self.con);
        }
        let y_hat = &self.core.e * &du + &f;
        let cost = self.core.cost(&du, eps, &y_hat, &ry, &ru, &self.plan.u_prev);
        self.plan.delta_u = du.clone();
        self.plan.u_prev = u.clone();
        Ok(MoveInfo {
            u,
            delta_u: du,
            eps,
            y_hat,
            cost,
            status,
            iterations: sol.iterations,
            active_set: sol.active_set,
        })
    }

    fn summary(&self) -> String {
        controller_summary("LinMPC", "active-set QP", &self.est, self.core.hp, self.core.hc, self.core.weights.has_slack())
    }
}

/// Unconstrained linear MPC: one pre-factorized linear solve per move.
#[derive(Clone, Debug)]
pub struct ExplicitMpc {
    est: StateEstimator,
    core: LinearCore,
    chol: Cholesky<f64, Dyn>,
    plan: Plan,
}

fn factor(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(h.clone()).ok_or_else(|| Error::Singular("the explicit MPC Hessian is not positive definite".into()))
}

impl ExplicitMpc {
    pub fn new(est: StateEstimator, cfg: &MpcConfig) -> Result<Self> {
        let core = LinearCore::new(&est, cfg)?;
        let chol = factor(&core.h)?;
        let plan = Plan::new(est.model().base().uop(), cfg.hc);
        Ok(ExplicitMpc { est, core, chol, plan })
    }

    pub fn with_default_estimator(model: LinearModel, cfg: &MpcConfig) -> Result<Self> {
        Self::new(default_linear_estimator(model)?, cfg)
    }

    pub fn set_model(&mut self, model: LinearModel) -> Result<()> {
        self.est.set_model(model)?;
        self.core.rebuild(&self.est);
        self.chol = factor(&self.core.h)?;
        Ok(())
    }

    pub fn weights(&self) -> &MpcWeights {
        &self.core.weights
    }
}

impl Predictive for ExplicitMpc {
    fn estimator(&self) -> &StateEstimator {
        &self.est
    }
    fn estimator_mut(&mut self) -> &mut StateEstimator {
        &mut self.est
    }
    fn hp(&self) -> usize {
        self.core.hp
    }
    fn hc(&self) -> usize {
        self.core.hc
    }
    fn name(&self) -> &'static str {
        "ExplicitMPC"
    }
    fn last_input(&self) -> &DVector<f64> {
        &self.plan.u_prev
    }
    fn set_last_input(&mut self, u: &[f64]) -> Result<()> {
        check_len("u", self.plan.nu, u.len())?;
        self.plan.u_prev = DVector::from_column_slice(u);
        Ok(())
    }

    fn move_input(&mut self, preview: &Preview) -> Result<MoveInfo> {
        check_prepared(&self.est)?;
        let aug = self.est.model();
        let (ry, dhat, ru) = preview.expand(self.core.hp, aug.ny(), aug.nd(), aug.base().uop())?;
        let (f, _) = self.core.free(&self.est, &self.plan.u_prev, &preview.d, &dhat);
        let q = self.core.gradient(&f, &ry, &ru, &self.plan.u_prev);
        let du = self.chol.solve(&(-q));
        let u = &self.plan.u_prev + du.rows(0, self.plan.nu);
        let y_hat = &self.core.e * &du + &f;
        let cost = self.core.cost(&du, 0.0, &y_hat, &ry, &ru, &self.plan.u_prev);
        self.plan.delta_u = du.clone();
        self.plan.u_prev = u.clone();
        Ok(MoveInfo {
            u,
            delta_u: du,
            eps: 0.0,
            y_hat,
            cost,
            status: MoveStatus::Optimal,
            iterations: 0,
            active_set: Vec::new(),
        })
    }

    fn summary(&self) -> String {
        controller_summary("ExplicitMPC", "Cholesky", &self.est, self.core.hp, self.core.hc, false)
    }
}

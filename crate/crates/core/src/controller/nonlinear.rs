//! Nonlinear and economic MPC solved by single shooting with SQP.

use nalgebra::{DMatrix, DVector};

use super::{
    check_prepared, controller_summary, move_matrix, ConstraintSpec, MoveInfo, MoveStatus, MpcConfig, MpcConstraints,
    MpcWeights, Plan, Predictive, Preview,
};
use crate::autodiff::{gradient, quad_form, Dual8, Real, CHUNK};
use crate::error::{check_len, Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorKind, StateEstimator};
use crate::model::{Model, ModelScalar, SimModel};
use crate::optim::{solve_nlp, Nlp, NlpProblem, NlpStatus, SqpOptions};

/// Economic cost `JE(UE, ŶE, D̂E, p)` over the stacked vectors
/// `UE = [U; u(k+Hp-1)]`, `ŶE = [ŷ(k); Ŷ]` and `D̂E = [d(k); D̂]`.
pub trait Economic: Clone {
    fn je<T: ModelScalar>(&self, ue: &[T], ye: &[T], de: &[T], p: &[f64]) -> T;
}

/// No economic term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoEconomic;

impl Economic for NoEconomic {
    fn je<T: ModelScalar>(&self, _ue: &[T], _ye: &[T], _de: &[T], _p: &[f64]) -> T {
        T::zero()
    }
}

#[derive(Clone, Debug)]
pub struct NonLinMpc<J: Economic = NoEconomic> {
    est: StateEstimator,
    hp: usize,
    hc: usize,
    weights: MpcWeights,
    s: DMatrix<f64>,
    con: MpcConstraints,
    plan: Plan,
    je: J,
    p: Vec<f64>,
    sqp: SqpOptions,
}

/// Everything one solve needs besides the decision vector.
struct Context<'a, J: Economic> {
    mpc: &'a NonLinMpc<J>,
    x0: DVector<f64>,
    d: Vec<f64>,
    dhat: DVector<f64>,
    ry: DVector<f64>,
    ru: DVector<f64>,
    x_off: DVector<f64>,
    y_rows: usize,
    x_rows: usize,
}

impl<J: Economic> Context<'_, J> {
    /// Objective value, predicted outputs `Ŷ` and terminal state.
    fn simulate<T: ModelScalar>(&self, z: &[T]) -> (T, Vec<T>, Vec<T>) {
        let m = self.mpc;
        let aug = m.est.model();
        let (nu, ny, nd, n) = (aug.nu(), aug.ny(), aug.nd(), aug.nx_hat());
        let ndu = m.hc * nu;
        let du = &z[..ndu];
        let eps = if m.weights.has_slack() { z[ndu] } else { T::zero() };
        let bias = m.est.output_bias();

        let mut u = vec![T::zero(); (m.hp + 1) * nu];
        for j in 0..m.hp {
            for c in 0..nu {
                let mut v = T::from_f64(m.plan.u_prev[c]);
                for i in 0..=j.min(m.hc - 1) {
                    v += du[i * nu + c];
                }
                u[j * nu + c] = v;
            }
        }
        for c in 0..nu {
            u[m.hp * nu + c] = u[(m.hp - 1) * nu + c];
        }
        let mut de = vec![T::zero(); (m.hp + 1) * nd];
        for i in 0..nd {
            de[i] = T::from_f64(self.d[i]);
        }
        for (i, v) in self.dhat.iter().enumerate() {
            de[nd + i] = T::from_f64(*v);
        }
        let mut x: Vec<T> = self.x0.iter().map(|&v| T::from_f64(v)).collect();
        let mut next = vec![T::zero(); n];
        let mut ye = vec![T::zero(); (m.hp + 1) * ny];
        aug.h_hat(&mut ye[..ny], &x, &de[..nd]);
        for j in 0..m.hp {
            aug.f_hat(&mut next, &x, &u[j * nu..(j + 1) * nu], &de[j * nd..(j + 1) * nd]);
            std::mem::swap(&mut x, &mut next);
            let dj = &de[(j + 1) * nd..(j + 2) * nd];
            aug.h_hat(&mut ye[(j + 1) * ny..(j + 2) * ny], &x, dj);
        }
        for j in 0..=m.hp {
            for i in 0..ny {
                ye[j * ny + i] = ye[j * ny + i] + bias[i];
            }
        }
        let yhat = &ye[ny..];
        let ey: Vec<T> = yhat.iter().zip(self.ry.iter()).map(|(&y, &r)| T::from_f64(r) - y).collect();
        let eu: Vec<T> = u[..m.hp * nu].iter().zip(self.ru.iter()).map(|(&v, &r)| T::from_f64(r) - v).collect();
        let w = &m.weights;
        let mut cost = quad_form(&ey, &w.m_hp) + quad_form(du, &w.n_hc) + quad_form(&eu, &w.l_hp);
        if w.has_slack() {
            cost += eps * eps * w.cwt;
        }
        if w.ewt != 0.0 {
            cost += m.je.je(&u, &ye, &de, &m.p) * w.ewt;
        }
        (cost, yhat.to_vec(), x)
    }
}

fn bound_rows<T: Real>(g: &mut [T], mut row: usize, val: &[T], lo: &DVector<f64>, hi: &DVector<f64>, clo: &DVector<f64>, chi: &DVector<f64>, eps: T) -> usize {
    for i in 0..val.len() {
        if hi[i].is_finite() {
            g[row] = val[i] - hi[i] - eps * chi[i];
            row += 1;
        }
        if lo[i].is_finite() {
            g[row] = T::from_f64(lo[i]) - val[i] - eps * clo[i];
            row += 1;
        }
    }
    row
}

impl<J: Economic> Nlp for Context<'_, J> {
    fn n_nonlinear(&self) -> usize {
        self.y_rows + self.x_rows
    }

    fn eval<T: ModelScalar>(&self, z: &[T], g: &mut [T]) -> T {
        let m = self.mpc;
        let (cost, yhat, x) = self.simulate(z);
        let ndu = self.mpc.s.ncols();
        let eps = if m.weights.has_slack() { z[ndu] } else { T::zero() };
        let c = &m.con;
        let mut row = bound_rows(g, 0, &yhat, &c.y_min, &c.y_max, &c.c_y_min, &c.c_y_max, eps);
        if self.x_rows > 0 {
            let xa: Vec<T> = x.iter().zip(self.x_off.iter()).map(|(&v, &o)| v + o).collect();
            row = bound_rows(g, row, &xa, &c.x_min, &c.x_max, &c.c_x_min, &c.c_x_max, eps);
        }
        debug_assert_eq!(row, self.n_nonlinear());
        cost
    }
}

fn count_finite(lo: &DVector<f64>, hi: &DVector<f64>) -> usize {
    lo.iter().chain(hi.iter()).filter(|v| v.is_finite()).count()
}

impl NonLinMpc<NoEconomic> {
    pub fn new(est: StateEstimator, cfg: &MpcConfig) -> Result<Self> {
        NonLinMpc::with_economic(est, cfg, NoEconomic, Vec::new())
    }

    /// Builds the controller with an unscented Kalman filter.
    pub fn with_default_estimator(model: impl Into<Model>, cfg: &MpcConfig) -> Result<Self> {
        let est = StateEstimator::new(EstimatorKind::Unscented, model, &EstimatorConfig::default())?;
        Self::new(est, cfg)
    }
}

impl<J: Economic> NonLinMpc<J> {
    /// Controller whose objective adds `Ewt · JE(UE, ŶE, D̂E, p)`.
    pub fn with_economic(est: StateEstimator, cfg: &MpcConfig, je: J, p: Vec<f64>) -> Result<Self> {
        let aug = est.model();
        let weights = MpcWeights::build(cfg, aug.nu(), aug.ny())?;
        let con = MpcConstraints::unbounded(aug.nu(), aug.ny(), aug.nx_hat(), cfg.hp, cfg.hc);
        let plan = Plan::new(aug.base().uop(), cfg.hc);
        Ok(NonLinMpc {
            hp: cfg.hp,
            hc: cfg.hc,
            s: move_matrix(cfg.hp, cfg.hc, aug.nu()),
            weights,
            con,
            plan,
            je,
            p,
            sqp: cfg.sqp,
            est,
        })
    }

    pub fn constraints(&self) -> &MpcConstraints {
        &self.con
    }

    pub fn weights(&self) -> &MpcWeights {
        &self.weights
    }

    pub fn set_constraints(&mut self, spec: &ConstraintSpec) -> Result<()> {
        let aug = self.est.model();
        self.con = self.con.updated(spec, aug.nu(), aug.ny(), aug.nx_hat(), self.hp, self.hc)?;
        Ok(())
    }

    pub fn nz(&self) -> usize {
        self.s.ncols() + usize::from(self.weights.has_slack())
    }

    fn context(&self, preview: &Preview) -> Result<Context<'_, J>> {
        let aug = self.est.model();
        let (ry, dhat, ru) = preview.expand(self.hp, aug.ny(), aug.nd(), aug.base().uop())?;
        let mut x_off = DVector::zeros(aug.nx_hat());
        if let Some(m) = aug.base().as_linear() {
            x_off.rows_mut(0, m.nx()).copy_from(&m.xop);
        }
        Ok(Context {
            mpc: self,
            x0: self.est.estimate_internal().clone(),
            d: preview.d.clone(),
            dhat,
            ry,
            ru,
            x_off,
            y_rows: count_finite(&self.con.y_min, &self.con.y_max),
            x_rows: count_finite(&self.con.x_min, &self.con.x_max),
        })
    }

    /// Objective at decision `z = [ΔU; ε]` for the current estimate.
    pub fn objective(&self, z: &[f64], preview: &Preview) -> Result<f64> {
        check_len("decision vector", self.nz(), z.len())?;
        Ok(self.context(preview)?.simulate(z).0)
    }

    /// Objective gradient by forward-mode differentiation.
    pub fn objective_gradient(&self, z: &[f64], preview: &Preview) -> Result<DVector<f64>> {
        check_len("decision vector", self.nz(), z.len())?;
        let ctx = self.context(preview)?;
        gradient::<CHUNK, _>(|zz: &[Dual8]| ctx.simulate(zz).0, z)
    }

    /// Affine rows on `U` and `ΔU`.
    fn affine_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let c = &self.con;
        let ndu = self.s.ncols();
        let nz = self.nz();
        let slack = self.weights.has_slack();
        let nu = self.plan.nu;
        let mut rows: Vec<(nalgebra::RowDVector<f64>, f64)> = Vec::new();
        let mut add = |coef: nalgebra::RowDVector<f64>, bound: f64, soft: f64| {
            let mut r = nalgebra::RowDVector::zeros(nz);
            r.columns_mut(0, ndu).copy_from(&coef);
            if slack {
                r[nz - 1] = -soft;
            }
            rows.push((r, bound));
        };
        for i in 0..c.u_max.len() {
            let up = self.plan.u_prev[i % nu];
            if c.u_max[i].is_finite() {
                add(self.s.row(i).into_owned(), c.u_max[i] - up, c.c_u_max[i]);
            }
            if c.u_min[i].is_finite() {
                add(-self.s.row(i), up - c.u_min[i], c.c_u_min[i]);
            }
        }
        for i in 0..ndu {
            let mut e = nalgebra::RowDVector::zeros(ndu);
            e[i] = 1.0;
            if c.du_max[i].is_finite() {
                add(e.clone(), c.du_max[i], c.c_du_max[i]);
            }
            if c.du_min[i].is_finite() {
                add(-e, -c.du_min[i], c.c_du_min[i]);
            }
        }
        let mut a = DMatrix::zeros(rows.len(), nz);
        let mut b = DVector::zeros(rows.len());
        for (i, (r, v)) in rows.into_iter().enumerate() {
            a.set_row(i, &r);
            b[i] = v;
        }
        (a, b)
    }
}

impl<J: Economic> Predictive for NonLinMpc<J> {
    fn estimator(&self) -> &StateEstimator {
        &self.est
    }
    fn estimator_mut(&mut self) -> &mut StateEstimator {
        &mut self.est
    }
    fn hp(&self) -> usize {
        self.hp
    }
    fn hc(&self) -> usize {
        self.hc
    }
    fn name(&self) -> &'static str {
        "NonLinMPC"
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
        let ndu = self.s.ncols();
        let nz = self.nz();
        let mut z0 = DVector::zeros(nz);
        z0.rows_mut(0, ndu).copy_from(&self.plan.shifted_zero_tail());
        let mut lower = DVector::from_element(nz, f64::NEG_INFINITY);
        if self.weights.has_slack() {
            lower[nz - 1] = 0.0;
        }
        let (a, b) = self.affine_rows();
        let prob = NlpProblem::new(z0)
            .with_bounds(lower, DVector::from_element(nz, f64::INFINITY))?
            .with_affine(a, b)?
            .with_options(self.sqp);
        let ctx = self.context(preview)?;
        let sol = match solve_nlp(&ctx, &prob) {
            Ok(s) => Some(s),
            Err(Error::NonFinite(_)) | Err(Error::NonFiniteDerivative { .. }) => None,
            Err(e) => return Err(e),
        };
        let optimal = sol.as_ref().is_some_and(|s| s.status == NlpStatus::Optimal && s.z.iter().all(|v| v.is_finite()));
        let (du, eps, status) = match &sol {
            Some(s) if optimal => (s.z.rows(0, ndu).into_owned(), if nz > ndu { s.z[nz - 1] } else { 0.0 }, MoveStatus::Optimal),
            _ => {
                log::warn!("nonlinear MPC solve not optimal; applying the shifted previous plan");
                (self.plan.shifted(), 0.0, MoveStatus::Fallback)
            }
        };
        let mut z = DVector::zeros(nz);
        z.rows_mut(0, ndu).copy_from(&du);
        if nz > ndu {
            z[nz - 1] = eps;
        }
        let (cost, yhat, _) = ctx.simulate(z.as_slice());
        let nu = self.plan.nu;
        let mut u = &self.plan.u_prev + du.rows(0, nu);
        // Hard input bounds hold exactly even if the last step stopped short.
        for i in 0..nu {
            let hard_hi = !self.weights.has_slack() || self.con.c_u_max[i] == 0.0;
            let hard_lo = !self.weights.has_slack() || self.con.c_u_min[i] == 0.0;
            if hard_hi || status == MoveStatus::Fallback {
                u[i] = u[i].min(self.con.u_max[i]);
            }
            if hard_lo || status == MoveStatus::Fallback {
                u[i] = u[i].max(self.con.u_min[i]);
            }
        }
        let iterations = sol.as_ref().map_or(0, |s| s.iterations);
        drop(ctx);
        self.plan.delta_u = du.clone();
        self.plan.u_prev = u.clone();
        Ok(MoveInfo {
            u,
            delta_u: du,
            eps,
            y_hat: DVector::from_vec(yhat),
            cost,
            status,
            iterations,
            active_set: Vec::new(),
        })
    }

    fn summary(&self) -> String {
        controller_summary("NonLinMPC", "SQP", &self.est, self.hp, self.hc, self.weights.has_slack())
    }
}

//! State estimators over augmented plant models.
//!
//! Every estimator splits a period into a measurement correction and a time
//! update. In the current form the correction runs in [`StateEstimator::prepare`]
//! so the published estimate is `x̂(k|k)`; in the predictor form it is deferred to
//! [`StateEstimator::update`] and the published estimate is `x̂(k|k-1)`.

mod augment;
mod mhe;
mod unscented;

pub use augment::{default_nint_ym, select_rows, Augmented, LinearAugmented, OBSERVABILITY_TOL};
pub use mhe::{MheBounds, MheInfo};
pub use unscented::{unscented_transform, weighted_cross, weighted_mean, SigmaPoints, UnscentedParams};

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff::{jacobian, Dual8, Real, CHUNK};
use crate::error::{check_len, Error, Result};
use crate::linalg::{diag, lstsq, spd_inverse, spectral_radius, symmetrize};
use crate::model::{LinearModel, Model, SimModel};
use crate::optim::{place_poles, solve_dare};
use mhe::Mhe;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Form {
    Current,
    Predictor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    SteadyKalman,
    Kalman,
    Luenberger,
    Unscented,
    Extended,
    MovingHorizon,
    Internal,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::SteadyKalman => "SteadyKalmanFilter",
            EstimatorKind::Kalman => "KalmanFilter",
            EstimatorKind::Luenberger => "Luenberger",
            EstimatorKind::Unscented => "UnscentedKalmanFilter",
            EstimatorKind::Extended => "ExtendedKalmanFilter",
            EstimatorKind::MovingHorizon => "MovingHorizonEstimator",
            EstimatorKind::Internal => "InternalModel",
        }
    }
}

/// Tuning shared by all estimator kinds; unset fields take defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub sigma_q: Option<Vec<f64>>,
    pub sigma_r: Option<Vec<f64>>,
    pub nint_u: Option<Vec<usize>>,
    pub nint_ym: Option<Vec<usize>>,
    pub sigma_q_int_u: Option<Vec<f64>>,
    pub sigma_q_int_ym: Option<Vec<f64>>,
    /// Initial standard deviations of the full augmented state.
    pub sigma_p0: Option<Vec<f64>>,
    pub i_ym: Option<Vec<usize>>,
    pub form: Form,
    pub poles: Option<Vec<Complex<f64>>>,
    pub unscented: UnscentedParams,
    pub he: usize,
    pub mhe_cwt: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            sigma_q: None,
            sigma_r: None,
            nint_u: None,
            nint_ym: None,
            sigma_q_int_u: None,
            sigma_q_int_ym: None,
            sigma_p0: None,
            i_ym: None,
            form: Form::Current,
            poles: None,
            unscented: UnscentedParams::default(),
            he: 10,
            mhe_cwt: f64::INFINITY,
        }
    }
}

pub const DEFAULT_SIGMA_Q: f64 = 0.1;
pub const DEFAULT_SIGMA_R: f64 = 1.0;
pub const DEFAULT_SIGMA_Q_INT: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct StateEstimator {
    kind: EstimatorKind,
    aug: Augmented,
    form: Form,
    xhat: DVector<f64>,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    gain: Option<DMatrix<f64>>,
    ukf: UnscentedParams,
    mhe: Option<Mhe>,
    /// Output bias of the internal-model structure (zero elsewhere).
    bias: DVector<f64>,
    prepared: bool,
    k: usize,
    degraded: bool,
}

fn positive(name: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!("{name} must contain finite non-negative values")));
    }
    Ok(())
}

fn squared_diag(v: &[f64]) -> DMatrix<f64> {
    diag(&v.iter().map(|s| s * s).collect::<Vec<_>>())
}

impl StateEstimator {
    pub fn new(kind: EstimatorKind, model: impl Into<Model>, cfg: &EstimatorConfig) -> Result<Self> {
        let model = model.into();
        let aug = if kind == EstimatorKind::Internal {
            if let Some(m) = model.as_linear() {
                let rho = spectral_radius(&m.a);
                if rho >= 1.0 {
                    return Err(Error::Unstable(format!(
                        "the internal model structure needs an asymptotically stable model (spectral radius {rho:.4})"
                    )));
                }
            }
            let nym = cfg.i_ym.as_ref().map_or(model.ny(), |v| v.len());
            let nu = model.nu();
            Augmented::new(model, Some(vec![0; nu]), Some(vec![0; nym]), cfg.i_ym.clone())?
        } else {
            Augmented::new(model, cfg.nint_u.clone(), cfg.nint_ym.clone(), cfg.i_ym.clone())?
        };
        if matches!(kind, EstimatorKind::SteadyKalman | EstimatorKind::Kalman | EstimatorKind::Luenberger) && aug.linear().is_none() {
            return Err(Error::Unsupported(format!("{} requires a linear model", kind.name())));
        }
        let nx = aug.nx();
        let sigma_q = cfg.sigma_q.clone().unwrap_or_else(|| vec![DEFAULT_SIGMA_Q; nx]);
        let sigma_r = cfg.sigma_r.clone().unwrap_or_else(|| vec![DEFAULT_SIGMA_R; aug.nym()]);
        let sq_iu = cfg.sigma_q_int_u.clone().unwrap_or_else(|| vec![DEFAULT_SIGMA_Q_INT; aug.niu()]);
        let sq_iy = cfg.sigma_q_int_ym.clone().unwrap_or_else(|| vec![DEFAULT_SIGMA_Q_INT; aug.niy()]);
        check_len("sigma_q", nx, sigma_q.len())?;
        check_len("sigma_r", aug.nym(), sigma_r.len())?;
        check_len("sigma_q_int_u", aug.niu(), sq_iu.len())?;
        check_len("sigma_q_int_ym", aug.niy(), sq_iy.len())?;
        positive("sigma_q", &sigma_q)?;
        positive("sigma_q_int", &sq_iu)?;
        positive("sigma_q_int", &sq_iy)?;
        if sigma_r.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("sigma_r must be positive".into()));
        }
        let q_all: Vec<f64> = sigma_q.iter().chain(&sq_iu).chain(&sq_iy).copied().collect();
        let q = squared_diag(&q_all);
        let r = squared_diag(&sigma_r);
        let p = match &cfg.sigma_p0 {
            Some(s) => {
                check_len("sigma_p0", aug.nx_hat(), s.len())?;
                positive("sigma_p0", s)?;
                squared_diag(s)
            }
            None => q.clone(),
        };
        let n = aug.nx_hat();
        let mut est = StateEstimator {
            kind,
            form: cfg.form,
            xhat: DVector::zeros(n),
            p,
            q,
            r,
            gain: None,
            ukf: cfg.unscented,
            mhe: None,
            bias: DVector::zeros(aug.ny()),
            prepared: false,
            k: 0,
            degraded: false,
            aug,
        };
        // Linear estimates start at the operating point, nonlinear ones at the
        // model's stored state.
        if let Model::Nonlinear(m) = est.aug.base() {
            let x = m.state();
            est.xhat.rows_mut(0, x.len()).copy_from(&x);
        }
        match kind {
            EstimatorKind::SteadyKalman => {
                let cm = est.aug.cm().expect("linear");
                let (p, k) = solve_dare(&est.aug.linear().unwrap().a, &cm, &est.q, &est.r)?;
                est.p = p;
                est.gain = Some(k);
            }
            EstimatorKind::Luenberger => {
                let poles = match &cfg.poles {
                    Some(p) => p.clone(),
                    None => (0..n).map(|i| Complex::new(0.8 - 0.01 * i as f64, 0.0)).collect(),
                };
                est.gain = Some(luenberger_gain(est.aug.linear().unwrap(), &est.aug.cm().unwrap(), &poles)?);
            }
            EstimatorKind::MovingHorizon => {
                if cfg.he == 0 {
                    return Err(Error::InvalidArgument("estimation horizon must be at least 1".into()));
                }
                est.mhe = Some(Mhe::new(cfg.he, cfg.mhe_cwt, n, est.aug.nym()));
            }
            _ => {}
        }
        Ok(est)
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn model(&self) -> &Augmented {
        &self.aug
    }

    pub fn nx_hat(&self) -> usize {
        self.aug.nx_hat()
    }

    pub fn period(&self) -> usize {
        self.k
    }

    pub fn is_prepared(&self) -> bool {
        self.prepared
    }

    /// True when the last moving-horizon solve failed and the prior was kept.
    pub fn degraded(&self) -> bool {
        self.degraded
    }

    /// Absolute augmented estimate.
    pub fn estimate(&self) -> DVector<f64> {
        self.aug.to_absolute(&self.xhat)
    }

    /// Estimate in estimation coordinates (deviation for linear models).
    pub fn estimate_internal(&self) -> &DVector<f64> {
        &self.xhat
    }

    pub fn set_estimate(&mut self, x: &[f64]) -> Result<()> {
        check_len("estimate", self.nx_hat(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("estimate"));
        }
        self.xhat = self.aug.from_absolute(&DVector::from_column_slice(x));
        Ok(())
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn set_covariance(&mut self, p: DMatrix<f64>) -> Result<()> {
        check_len("covariance", self.nx_hat(), p.nrows())?;
        check_len("covariance", self.nx_hat(), p.ncols())?;
        self.p = p;
        symmetrize(&mut self.p);
        Ok(())
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Constant gain of the steady Kalman filter or Luenberger observer.
    pub fn gain(&self) -> Option<&DMatrix<f64>> {
        self.gain.as_ref()
    }

    /// Output correction added to every model prediction (internal model only).
    pub fn output_bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn mhe_info(&self) -> Option<&MheInfo> {
        self.mhe.as_ref().and_then(|m| m.info())
    }

    pub fn set_mhe_bounds(&mut self, b: MheBounds) -> Result<()> {
        let n = self.nx_hat();
        let nym = self.aug.nym();
        let m = self
            .mhe
            .as_mut()
            .ok_or_else(|| Error::Unsupported("bounds apply to the moving horizon estimator only".into()))?;
        b.validate(n, nym)?;
        m.bounds = b;
        Ok(())
    }

    fn check_inputs(&self, ym: &[f64], d: &[f64]) -> Result<()> {
        check_len("ym", self.aug.nym(), ym.len())?;
        check_len("d", self.aug.nd(), d.len())?;
        if ym.iter().chain(d).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement"));
        }
        Ok(())
    }

    /// Incorporates the measurement of the current period (current form) and
    /// returns the absolute estimate used by the controller.
    pub fn prepare(&mut self, ym: &[f64], d: &[f64]) -> Result<DVector<f64>> {
        if self.prepared {
            return Err(Error::CallOrder("prepare called twice in the same period"));
        }
        self.check_inputs(ym, d)?;
        if self.form == Form::Current {
            self.correct(ym, d)?;
        }
        self.prepared = true;
        Ok(self.estimate())
    }

    /// Time update with the applied input; returns the next-period estimate.
    pub fn update(&mut self, u: &[f64], ym: &[f64], d: &[f64]) -> Result<DVector<f64>> {
        if !self.prepared {
            return Err(Error::CallOrder("update called before prepare"));
        }
        check_len("u", self.aug.nu(), u.len())?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input"));
        }
        self.check_inputs(ym, d)?;
        if self.form == Form::Predictor {
            self.correct(ym, d)?;
        }
        self.predict(u, d)?;
        self.prepared = false;
        self.k += 1;
        Ok(self.estimate())
    }

    fn innovation(&self, ym: &[f64], d: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(ym) - self.aug.hm_f64(&self.xhat, d)
    }

    fn measurement_jacobian(&self, d: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(cm) = self.aug.cm() {
            return Ok(cm);
        }
        let dd: Vec<Dual8> = d.iter().map(|&v| Dual8::from_f64(v)).collect();
        let ny = self.aug.ny();
        let full = jacobian::<CHUNK, _>(
            |z| {
                let mut out = vec![Dual8::zero(); ny];
                self.aug.h_hat(&mut out, z, &dd);
                out
            },
            self.xhat.as_slice(),
        )?;
        Ok(select_rows(&full, self.aug.i_ym()))
    }

    fn state_jacobian(&self, u: &[f64], d: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(l) = self.aug.linear() {
            return Ok(l.a.clone());
        }
        let uu: Vec<Dual8> = u.iter().map(|&v| Dual8::from_f64(v)).collect();
        let dd: Vec<Dual8> = d.iter().map(|&v| Dual8::from_f64(v)).collect();
        let n = self.nx_hat();
        jacobian::<CHUNK, _>(
            |z| {
                let mut out = vec![Dual8::zero(); n];
                self.aug.f_hat(&mut out, z, &uu, &dd);
                out
            },
            self.xhat.as_slice(),
        )
    }

    /// Kalman correction with measurement matrix `h`.
    fn kalman_correct(&mut self, h: &DMatrix<f64>, innov: &DVector<f64>) -> Result<()> {
        let pht = &self.p * h.transpose();
        let s = h * &pht + &self.r;
        let k = &pht * spd_inverse(&s)?;
        self.xhat += &k * innov;
        let n = self.nx_hat();
        let ikh = DMatrix::identity(n, n) - &k * h;
        self.p = &ikh * &self.p * ikh.transpose() + &k * &self.r * k.transpose();
        symmetrize(&mut self.p);
        Ok(())
    }

    fn correct(&mut self, ym: &[f64], d: &[f64]) -> Result<()> {
        match self.kind {
            EstimatorKind::Kalman | EstimatorKind::Extended => {
                let h = self.measurement_jacobian(d)?;
                let innov = self.innovation(ym, d);
                self.kalman_correct(&h, &innov)?;
            }
            EstimatorKind::SteadyKalman | EstimatorKind::Luenberger => {
                let innov = self.innovation(ym, d);
                self.xhat += self.gain.as_ref().expect("constant gain") * innov;
            }
            EstimatorKind::Unscented => {
                let sp = self.ukf.sigma_points(&self.xhat, &self.p)?;
                let ys: Vec<DVector<f64>> = sp.points.iter().map(|x| self.aug.hm_f64(x, d)).collect();
                let ybar = weighted_mean(&ys, &sp.wm);
                let mut pyy = weighted_cross(&ys, &ybar, &ys, &ybar, &sp.wc) + &self.r;
                symmetrize(&mut pyy);
                let pxy = weighted_cross(&sp.points, &self.xhat, &ys, &ybar, &sp.wc);
                let k = pxy * spd_inverse(&pyy)?;
                self.xhat += &k * (DVector::from_column_slice(ym) - ybar);
                self.p -= &k * pyy * k.transpose();
                symmetrize(&mut self.p);
            }
            EstimatorKind::MovingHorizon => {
                let h = self.measurement_jacobian(d)?;
                let mut mhe = self.mhe.take().expect("moving horizon state");
                let res = mhe.correct(&self.aug, &self.q, &self.r, &self.xhat, &self.p, ym, d);
                self.mhe = Some(mhe);
                let x_new = res?;
                self.degraded = x_new.is_none();
                // Arrival covariance recursion: EKF correction at the prior.
                let pht = &self.p * h.transpose();
                let s = &h * &pht + &self.r;
                let k = &pht * spd_inverse(&s)?;
                let n = self.nx_hat();
                let ikh = DMatrix::identity(n, n) - &k * &h;
                self.p = &ikh * &self.p * ikh.transpose() + &k * &self.r * k.transpose();
                symmetrize(&mut self.p);
                if let Some(x) = x_new {
                    self.xhat = x;
                }
            }
            EstimatorKind::Internal => {
                let y = self.aug.h_hat_f64(&self.xhat, d);
                self.bias.fill(0.0);
                for (k, &i) in self.aug.i_ym().iter().enumerate() {
                    self.bias[i] = ym[k] - y[i];
                }
            }
        }
        Ok(())
    }

    fn predict(&mut self, u: &[f64], d: &[f64]) -> Result<()> {
        match self.kind {
            EstimatorKind::Kalman | EstimatorKind::Extended | EstimatorKind::MovingHorizon => {
                let f = self.state_jacobian(u, d)?;
                self.xhat = self.aug.f_hat_f64(&self.xhat, u, d);
                self.p = &f * &self.p * f.transpose() + &self.q;
                symmetrize(&mut self.p);
                if let Some(m) = self.mhe.as_mut() {
                    m.record_input(u);
                }
            }
            EstimatorKind::Unscented => {
                let aug = &self.aug;
                let (x, p) = unscented_transform(&self.xhat, &self.p, &self.ukf, |x| aug.f_hat_f64(x, u, d))?;
                self.xhat = x;
                self.p = p + &self.q;
                symmetrize(&mut self.p);
            }
            EstimatorKind::SteadyKalman | EstimatorKind::Luenberger | EstimatorKind::Internal => {
                self.xhat = self.aug.f_hat_f64(&self.xhat, u, d);
            }
        }
        if self.xhat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state estimate"));
        }
        Ok(())
    }

    /// Steady-state initialization so that the estimated measured outputs
    /// equal `ym` with input `u` and disturbance `d`.
    pub fn init_state(&mut self, u: &[f64], ym: &[f64], d: &[f64]) -> Result<DVector<f64>> {
        check_len("u", self.aug.nu(), u.len())?;
        self.check_inputs(ym, d)?;
        let nym = self.aug.nym();
        let n = self.nx_hat();
        if let (Some(l), Some(m)) = (self.aug.linear(), self.aug.base().as_linear()) {
            let cm = self.aug.cm().unwrap();
            let du = DVector::from_column_slice(u) - &m.uop;
            let dd = DVector::from_column_slice(d) - &m.dop;
            let mut lhs = DMatrix::zeros(n + nym, n);
            lhs.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) - &l.a));
            lhs.view_mut((n, 0), (nym, n)).copy_from(&cm);
            let mut rhs = DVector::zeros(n + nym);
            rhs.rows_mut(0, n).copy_from(&(&l.bu * &du + &l.bd * &dd + &l.bias));
            let dd_m = select_rows(&l.dd, self.aug.i_ym());
            let yop_m = DVector::from_iterator(nym, self.aug.i_ym().iter().map(|&i| m.yop[i]));
            let target = DVector::from_column_slice(ym) - dd_m * &dd - yop_m;
            if self.kind == EstimatorKind::Internal {
                // The deterministic model runs open loop; the bias absorbs any offset.
                rhs.rows_mut(n, nym).fill(0.0);
                lhs.view_mut((n, 0), (nym, n)).fill(0.0);
            } else {
                rhs.rows_mut(n, nym).copy_from(&target);
            }
            let (x, rank) = lstsq(&lhs, &rhs)?;
            if rank < n {
                log::warn!("steady-state initialization is singular; using the least-squares solution");
            }
            self.xhat = x;
        } else {
            // Keep the plant-state part, zero the input integrators and let the
            // output integrators absorb the measured-output offset.
            let nx = self.aug.nx();
            let niu = self.aug.niu();
            for i in nx..n {
                self.xhat[i] = 0.0;
            }
            let y0 = self.aug.hm_f64(&self.xhat, d);
            let mut off = nx + niu;
            for (k, &cnt) in self.aug.nint_ym().iter().enumerate() {
                if cnt > 0 {
                    self.xhat[off] = ym[k] - y0[k];
                    off += cnt;
                }
            }
        }
        if self.kind == EstimatorKind::Internal {
            let y = self.aug.h_hat_f64(&self.xhat, d);
            self.bias.fill(0.0);
            for (k, &i) in self.aug.i_ym().iter().enumerate() {
                self.bias[i] = ym[k] - y[i];
            }
        }
        if let Some(m) = self.mhe.as_mut() {
            m.reset();
        }
        Ok(self.estimate())
    }

    /// Swaps the linear model, keeping the absolute estimate and covariance.
    pub fn set_model(&mut self, model: LinearModel) -> Result<()> {
        if !matches!(self.kind, EstimatorKind::Kalman | EstimatorKind::MovingHorizon) || self.aug.linear().is_none() {
            return Err(Error::Unsupported(format!("{} does not support model changes", self.kind.name())));
        }
        let old = self.aug.clone();
        let x_abs = old.to_absolute(&self.xhat);
        self.aug.set_base(model)?;
        self.xhat = self.aug.from_absolute(&x_abs);
        if let Some(m) = self.mhe.as_mut() {
            m.rebase(&old, &self.aug);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> EstimatorSnapshot {
        EstimatorSnapshot {
            kind: self.kind,
            form: self.form,
            xhat: self.xhat.iter().copied().collect(),
            p: self.p.row_iter().map(|r| r.iter().copied().collect()).collect(),
            bias: self.bias.iter().copied().collect(),
            prepared: self.prepared,
            k: self.k,
            window: self.mhe.as_ref().map(|m| m.records()).unwrap_or_default(),
        }
    }

    pub fn restore(&mut self, s: &EstimatorSnapshot) -> Result<()> {
        if s.kind != self.kind || s.form != self.form {
            return Err(Error::InvalidArgument("snapshot belongs to a different estimator".into()));
        }
        let n = self.nx_hat();
        check_len("snapshot estimate", n, s.xhat.len())?;
        check_len("snapshot covariance", n, s.p.len())?;
        check_len("snapshot bias", self.aug.ny(), s.bias.len())?;
        let mut p = DMatrix::zeros(n, n);
        for (i, row) in s.p.iter().enumerate() {
            check_len("snapshot covariance", n, row.len())?;
            for (j, v) in row.iter().enumerate() {
                p[(i, j)] = *v;
            }
        }
        if let Some(m) = self.mhe.as_mut() {
            m.restore(&s.window, n, self.aug.nym(), self.aug.nu(), self.aug.nd())?;
        }
        self.xhat = DVector::from_column_slice(&s.xhat);
        self.p = p;
        self.bias = DVector::from_column_slice(&s.bias);
        self.prepared = s.prepared;
        self.k = s.k;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{} estimator with a sample time Ts = {} s and:\n{}",
            self.kind.name(),
            self.aug.ts(),
            self.aug.summary()
        )
    }
}

/// Current-form observer gain: `eig((I - K Ĉ) Â) = poles`, placed on `(Â, ĈÂ)`.
fn luenberger_gain(l: &LinearAugmented, cm: &DMatrix<f64>, poles: &[Complex<f64>]) -> Result<DMatrix<f64>> {
    place_poles(&l.a, &(cm * &l.a), poles)
}

/// Serializable estimator state for deterministic resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSnapshot {
    pub kind: EstimatorKind,
    pub form: Form,
    pub xhat: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub prepared: bool,
    pub k: usize,
    pub window: Vec<mhe::WindowRecord>,
}

impl EstimatorSnapshot {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests;

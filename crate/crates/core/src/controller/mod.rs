//! Predictive controllers built on top of a state estimator.
//!
//! A controller owns its estimator. Each period runs
//! [`Predictive::prepare`], [`Predictive::move_input`] and [`Predictive::update`]
//! in that order.

mod constraints;
mod linear;
mod nonlinear;

pub use constraints::{ConstraintSpec, MpcConstraints};
pub use linear::{ExplicitMpc, LinMpc};
pub use nonlinear::{Economic, NoEconomic, NonLinMpc};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::estimator::StateEstimator;
use crate::linalg::{block_diag, diag, min_sym_eigenvalue};
use crate::optim::SqpOptions;

pub const DEFAULT_HP: usize = 10;
pub const DEFAULT_HC: usize = 2;
pub const DEFAULT_MWT: f64 = 1.0;
pub const DEFAULT_NWT: f64 = 0.1;
pub const DEFAULT_LWT: f64 = 0.0;
pub const DEFAULT_CWT: f64 = 1e5;

/// Horizons, weights and solver settings. Per-channel vectors are repeated
/// over the horizons; full matrices override them.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcConfig {
    pub hp: usize,
    pub hc: usize,
    pub mwt: Option<Vec<f64>>,
    pub nwt: Option<Vec<f64>>,
    pub lwt: Option<Vec<f64>>,
    pub m_hp: Option<DMatrix<f64>>,
    pub n_hc: Option<DMatrix<f64>>,
    pub l_hp: Option<DMatrix<f64>>,
    /// Slack weight; infinite removes the slack variable.
    pub cwt: f64,
    /// Economic weight (nonlinear controller only).
    pub ewt: f64,
    pub sqp: SqpOptions,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            hp: DEFAULT_HP,
            hc: DEFAULT_HC,
            mwt: None,
            nwt: None,
            lwt: None,
            m_hp: None,
            n_hc: None,
            l_hp: None,
            cwt: DEFAULT_CWT,
            ewt: 0.0,
            sqp: SqpOptions::default(),
        }
    }
}

/// Expanded weight matrices over the horizons.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcWeights {
    pub m_hp: DMatrix<f64>,
    pub n_hc: DMatrix<f64>,
    pub l_hp: DMatrix<f64>,
    pub cwt: f64,
    pub ewt: f64,
}

fn repeat_diag(v: &[f64], times: usize) -> DMatrix<f64> {
    let block = diag(v);
    block_diag(&vec![&block; times])
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be finite")));
    }
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
    }
    if m.nrows() > 0 && min_sym_eigenvalue(m) < -1e-10 * m.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("{name} must be positive semidefinite")));
    }
    Ok(())
}

impl MpcWeights {
    pub fn build(cfg: &MpcConfig, nu: usize, ny: usize) -> Result<Self> {
        let (hp, hc) = (cfg.hp, cfg.hc);
        if hc == 0 || hp < hc {
            return Err(Error::InvalidArgument(format!("horizons need Hp ≥ Hc ≥ 1, got Hp={hp}, Hc={hc}")));
        }
        let pick = |m: &Option<DMatrix<f64>>, v: &Option<Vec<f64>>, def: f64, n: usize, times: usize, name: &'static str| -> Result<DMatrix<f64>> {
            if let Some(m) = m {
                check_len(name, n * times, m.nrows())?;
                check_len(name, n * times, m.ncols())?;
                return Ok(m.clone());
            }
            let v = v.clone().unwrap_or_else(|| vec![def; n]);
            check_len(name, n, v.len())?;
            Ok(repeat_diag(&v, times))
        };
        let w = MpcWeights {
            m_hp: pick(&cfg.m_hp, &cfg.mwt, DEFAULT_MWT, ny, hp, "Mwt")?,
            n_hc: pick(&cfg.n_hc, &cfg.nwt, DEFAULT_NWT, nu, hc, "Nwt")?,
            l_hp: pick(&cfg.l_hp, &cfg.lwt, DEFAULT_LWT, nu, hp, "Lwt")?,
            cwt: cfg.cwt,
            ewt: cfg.ewt,
        };
        check_psd("M_Hp", &w.m_hp)?;
        check_psd("N_Hc", &w.n_hc)?;
        check_psd("L_Hp", &w.l_hp)?;
        if !(w.cwt > 0.0) {
            return Err(Error::InvalidArgument("Cwt must be positive or infinite".into()));
        }
        if !w.ewt.is_finite() {
            return Err(Error::InvalidArgument("Ewt must be finite".into()));
        }
        Ok(w)
    }

    pub fn has_slack(&self) -> bool {
        self.cwt.is_finite()
    }
}

/// Setpoints and measured disturbances for one move, with optional previews
/// over the prediction horizon.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Preview {
    pub ry: Vec<f64>,
    pub d: Vec<f64>,
    /// `Hp·ny` output setpoints; defaults to `ry` repeated.
    pub ry_hat: Option<Vec<f64>>,
    /// `Hp·nd` disturbances `d(k+1)..d(k+Hp)`; defaults to `d` repeated.
    pub d_hat: Option<Vec<f64>>,
    /// `Hp·nu` input setpoints; defaults to the input operating point.
    pub ru_hat: Option<Vec<f64>>,
}

impl Preview {
    pub fn new(ry: &[f64], d: &[f64]) -> Self {
        Preview {
            ry: ry.to_vec(),
            d: d.to_vec(),
            ..Default::default()
        }
    }

    /// Expanded `(R̂y, D̂, R̂u)` after dimension checks.
    pub(crate) fn expand(&self, hp: usize, ny: usize, nd: usize, uop: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        check_len("ry", ny, self.ry.len())?;
        check_len("d", nd, self.d.len())?;
        let rep = |v: &[f64]| DVector::from_iterator(v.len() * hp, (0..hp).flat_map(|_| v.iter().copied()));
        let ry = match &self.ry_hat {
            Some(v) => {
                check_len("ry preview", hp * ny, v.len())?;
                DVector::from_column_slice(v)
            }
            None => rep(&self.ry),
        };
        let dh = match &self.d_hat {
            Some(v) => {
                check_len("d preview", hp * nd, v.len())?;
                DVector::from_column_slice(v)
            }
            None => rep(&self.d),
        };
        let ru = match &self.ru_hat {
            Some(v) => {
                check_len("ru preview", hp * uop.len(), v.len())?;
                DVector::from_column_slice(v)
            }
            None => rep(uop.as_slice()),
        };
        if ry.iter().chain(dh.iter()).chain(ru.iter()).chain(&self.d).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("setpoint or disturbance"));
        }
        Ok((ry, dh, ru))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveStatus {
    Optimal,
    /// The solver stopped early or failed; the shifted previous plan was used.
    Fallback,
}

/// Outcome of one move computation.
#[derive(Clone, Debug, PartialEq)]
pub struct MoveInfo {
    pub u: DVector<f64>,
    pub delta_u: DVector<f64>,
    pub eps: f64,
    /// Predicted outputs `ŷ(k+1)..ŷ(k+Hp)`.
    pub y_hat: DVector<f64>,
    pub cost: f64,
    pub status: MoveStatus,
    pub iterations: usize,
    pub active_set: Vec<usize>,
}

impl MoveInfo {
    pub fn degraded(&self) -> bool {
        self.status == MoveStatus::Fallback
    }
}

/// Move-plan bookkeeping shared by all controllers.
#[derive(Clone, Debug)]
pub(crate) struct Plan {
    pub(crate) u_prev: DVector<f64>,
    pub(crate) delta_u: DVector<f64>,
    pub(crate) nu: usize,
}

impl Plan {
    pub(crate) fn new(uop: &DVector<f64>, hc: usize) -> Self {
        Plan {
            u_prev: uop.clone(),
            delta_u: DVector::zeros(uop.len() * hc),
            nu: uop.len(),
        }
    }

    /// Previous plan advanced one step; the last block is kept.
    pub(crate) fn shifted(&self) -> DVector<f64> {
        let n = self.delta_u.len();
        let nu = self.nu;
        let mut s = self.delta_u.clone();
        if n > nu {
            for i in 0..n - nu {
                s[i] = self.delta_u[i + nu];
            }
        }
        s
    }

    /// Shifted plan with a zero final move.
    pub(crate) fn shifted_zero_tail(&self) -> DVector<f64> {
        let mut s = self.shifted();
        let n = s.len();
        s.rows_mut(n - self.nu, self.nu).fill(0.0);
        s
    }
}

/// Common controller interface used by the simulation loop.
pub trait Predictive {
    fn estimator(&self) -> &StateEstimator;
    fn estimator_mut(&mut self) -> &mut StateEstimator;
    fn hp(&self) -> usize;
    fn hc(&self) -> usize;
    fn name(&self) -> &'static str;
    /// Input applied at the previous move (the operating point before the first).
    fn last_input(&self) -> &DVector<f64>;
    fn set_last_input(&mut self, u: &[f64]) -> Result<()>;
    fn move_input(&mut self, preview: &Preview) -> Result<MoveInfo>;

    fn prepare(&mut self, ym: &[f64], d: &[f64]) -> Result<DVector<f64>> {
        self.estimator_mut().prepare(ym, d)
    }

    fn update(&mut self, u: &[f64], ym: &[f64], d: &[f64]) -> Result<DVector<f64>> {
        self.estimator_mut().update(u, ym, d)
    }

    /// Steady-state estimator initialization for a bumpless start at `u`.
    fn init_state(&mut self, u: &[f64], ym: &[f64], d: &[f64]) -> Result<DVector<f64>> {
        let x = self.estimator_mut().init_state(u, ym, d)?;
        self.set_last_input(u)?;
        Ok(x)
    }

    fn summary(&self) -> String;
}

pub(crate) fn check_prepared(est: &StateEstimator) -> Result<()> {
    if !est.is_prepared() {
        return Err(Error::CallOrder("move_input called before prepare"));
    }
    Ok(())
}

/// `S` with `U = S ΔU + T u_prev`: inputs are held after the last free move.
pub(crate) fn move_matrix(hp: usize, hc: usize, nu: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(hp * nu, hc * nu);
    for j in 0..hp {
        for i in 0..=j.min(hc - 1) {
            for c in 0..nu {
                s[(j * nu + c, i * nu + c)] = 1.0;
            }
        }
    }
    s
}

pub(crate) fn controller_summary(name: &str, solver: &str, est: &StateEstimator, hp: usize, hc: usize, slack: bool) -> String {
    format!(
        "{name} controller with a sample time Ts = {} s, {solver} optimizer, {} estimator and:\n{hp} prediction steps Hp\n{hc} control steps Hc\n{} slack variable ε (control constraints)\n{}",
        est.model().ts(),
        est.kind().name(),
        usize::from(slack),
        est.model().summary()
    )
}

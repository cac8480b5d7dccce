//! Built-in case studies: a two-tank CSTR under linear MPC and a motorized
//! pendulum under nonlinear, economic and successively linearized MPC.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{run_closed_loop, run_closed_loop_with, run_estimation_only, LoopSpec, Noise, Schedule, SimRecord};
use crate::autodiff::Real;
use crate::controller::{ConstraintSpec, Economic, LinMpc, MpcConfig, NonLinMpc, Predictive};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorKind, StateEstimator};
use crate::model::{
    from_transfer_function, linearize, Dynamics, LinearModel, Model, ModelScalar, NonlinearModel, SimModel,
    TransferFunction, TransferFunctionMatrix,
};

/// Pendulum driven by a motor torque, parameters `[g, L, K, m]`.
/// The output is the angle in degrees, followed by the speed when
/// `speed_output` is set.
#[derive(Clone, Copy, Debug, Default)]
pub struct Pendulum {
    pub speed_output: bool,
}

impl Dynamics for Pendulum {
    fn state<T: Real>(&self, out: &mut [T], x: &[T], u: &[T], _d: &[T], p: &[f64]) {
        let (g, l, k, m) = (p[0], p[1], p[2], p[3]);
        out[0] = x[1];
        out[1] = x[0].sin() * (-g / l) - x[1] * (k / m) + u[0] / (m * l * l);
    }

    fn output<T: Real>(&self, out: &mut [T], x: &[T], _d: &[T], _p: &[f64]) {
        out[0] = x[0] * (180.0 / PI);
        if self.speed_output {
            out[1] = x[1];
        }
    }
}

pub const PENDULUM_P: [f64; 4] = [9.8, 0.4, 1.2, 0.3];
pub const PENDULUM_TS: f64 = 0.1;

/// Pendulum model with friction scaled by `friction_factor`.
pub fn pendulum_model(speed_output: bool, friction_factor: f64) -> Result<NonlinearModel> {
    let mut p = PENDULUM_P.to_vec();
    p[2] *= friction_factor;
    let ny = 1 + usize::from(speed_output);
    let y: &[&str] = if speed_output { &["θ (deg)", "ω (rad/s)"] } else { &["θ (deg)"] };
    NonlinearModel::new(Pendulum { speed_output }, p, PENDULUM_TS, 1, 2, ny, 0)?.with_names(
        Some(&["τ (Nm)"]),
        Some(&["θ (rad)", "ω (rad/s)"]),
        Some(y),
        None,
    )
}

/// Motor work `Ts Σ τ(k+j) ω(k+j)` over the horizon, with the speed as
/// the second output and `p = [Ts]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PendulumWork;

impl Economic for PendulumWork {
    fn je<T: ModelScalar>(&self, ue: &[T], ye: &[T], _de: &[T], p: &[f64]) -> T {
        let hp = ue.len() - 1;
        let mut w = T::zero();
        for j in 0..hp {
            w = w + ue[j] * ye[2 * j + 1];
        }
        w * p[0]
    }
}

fn cstr_tf() -> [[TransferFunction; 2]; 2] {
    let t1 = TransferFunction::new(&[1.90], &[18.0, 1.0]);
    [
        [t1.clone(), t1],
        [TransferFunction::new(&[-0.74], &[8.0, 1.0]), TransferFunction::new(&[0.74], &[8.0, 1.0])],
    ]
}

pub const CSTR_UOP: [f64; 2] = [20.0, 20.0];
pub const CSTR_YOP: [f64; 2] = [50.0, 30.0];
pub const CSTR_TS: f64 = 2.0;

/// Two-input, two-output CSTR (cold and hot flows to level and temperature).
pub fn cstr_model() -> Result<LinearModel> {
    let [r1, r2] = cstr_tf();
    let g = TransferFunctionMatrix::new(vec![r1.to_vec(), r2.to_vec()])?;
    from_transfer_function(&g, CSTR_TS, &[])?
        .with_operating_point(&CSTR_UOP, &CSTR_YOP, &[])?
        .with_names(Some(&["u_c", "u_h"]), None, Some(&["y_L", "y_T"]), None)
}

/// CSTR with the hot-water load as a measured disturbance.
pub fn cstr_model_with_feedforward() -> Result<LinearModel> {
    let [r1, r2] = cstr_tf();
    let rows = [r1, r2].map(|r| vec![r[0].clone(), r[1].clone(), r[1].clone()]).to_vec();
    from_transfer_function(&TransferFunctionMatrix::new(rows)?, CSTR_TS, &[2])?
        .with_operating_point(&CSTR_UOP, &CSTR_YOP, &[20.0])?
        .with_names(Some(&["u_c", "u_h"]), None, Some(&["y_L", "y_T"]), Some(&["u_l"]))
}

fn default_seed() -> u64 {
    1
}

/// CSTR setpoint and load test: the setpoint moves to `[48, 35]` at step 25
/// and a `-10` load hits the hot flow at step 50.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CstrScenario {
    pub feedforward: bool,
    pub n: usize,
    pub hp: usize,
    pub hc: usize,
    pub mwt: Option<Vec<f64>>,
    pub nwt: Option<Vec<f64>>,
    pub y_min: Vec<f64>,
    /// Estimator noise levels: base states, measured outputs, output integrators.
    pub sigma_q: Option<Vec<f64>>,
    pub sigma_r: Option<Vec<f64>>,
    pub sigma_q_int_ym: Option<Vec<f64>>,
    pub y_noise: Option<Vec<f64>>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for CstrScenario {
    fn default() -> Self {
        CstrScenario {
            feedforward: false,
            n: 75,
            hp: 10,
            hc: 2,
            mwt: None,
            nwt: None,
            y_min: vec![45.0, f64::NEG_INFINITY],
            sigma_q: None,
            sigma_r: Some(vec![1.0, 1.0]),
            sigma_q_int_ym: Some(vec![1.0, 1.0]),
            y_noise: None,
            seed: default_seed(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendulumController {
    Nmpc,
    Empc,
    Slmpc,
    Estimator,
}

impl PendulumController {
    pub fn label(self) -> &'static str {
        match self {
            PendulumController::Nmpc => "NMPC",
            PendulumController::Empc => "EMPC",
            PendulumController::Slmpc => "SLMPC",
            PendulumController::Estimator => "UKF",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PendulumTest {
    /// Swing up from rest to 180°.
    Track,
    /// Hold 180° against a 10° output step.
    Regulate,
}

/// Pendulum scenarios; the plant friction is `friction_factor` times the
/// model's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumScenario {
    pub controller: PendulumController,
    pub test: PendulumTest,
    pub n: usize,
    pub hp: usize,
    pub hc: usize,
    pub mwt: f64,
    pub nwt: f64,
    pub u_bound: f64,
    pub ewt: f64,
    pub friction_factor: f64,
    /// Setpoint in degrees.
    pub setpoint: f64,
    /// Output step in degrees for the regulation test.
    pub y_step: f64,
    /// Constant torque of the estimation-only run.
    pub u_est: f64,
    pub y_noise: Option<f64>,
    pub seed: u64,
}

impl Default for PendulumScenario {
    fn default() -> Self {
        PendulumScenario {
            controller: PendulumController::Nmpc,
            test: PendulumTest::Track,
            n: 35,
            hp: 20,
            hc: 2,
            mwt: 0.5,
            nwt: 2.5,
            u_bound: 1.5,
            ewt: 3.5e3,
            friction_factor: 1.25,
            setpoint: 180.0,
            y_step: 10.0,
            u_est: 0.5,
            y_noise: None,
            seed: default_seed(),
        }
    }
}

impl PendulumScenario {
    pub fn new(controller: PendulumController, test: PendulumTest) -> Self {
        let mut s = PendulumScenario {
            controller,
            test,
            ..Default::default()
        };
        if controller == PendulumController::Estimator {
            s.y_noise = Some(0.5);
        }
        s
    }
}

/// Scenario file contents: a built-in case study with overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum Scenario {
    Cstr(CstrScenario),
    Pendulum(PendulumScenario),
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Short identifier used for file names and tables.
    pub fn label(&self) -> String {
        match self {
            Scenario::Cstr(c) => if c.feedforward { "cstr_ff" } else { "cstr" }.to_string(),
            Scenario::Pendulum(p) => {
                let t = match p.test {
                    PendulumTest::Track => "track",
                    PendulumTest::Regulate => "regulate",
                };
                format!("pendulum_{}_{t}", p.controller.label().to_lowercase())
            }
        }
    }

    /// Constructs controllers and plants once; [`Built::run`] clones them.
    pub fn build(&self) -> Result<Built> {
        match self {
            Scenario::Cstr(c) => build_cstr(c),
            Scenario::Pendulum(p) => build_pendulum(p),
        }
    }

    pub fn run(&self) -> Result<SimRecord> {
        self.build()?.run()
    }
}

/// Ready-to-run scenario.
#[derive(Clone, Debug)]
pub enum Built {
    Linear { ctrl: LinMpc, plant: Model, spec: LoopSpec, bounds: Bounds },
    Nonlinear { ctrl: NonLinMpc, plant: Model, spec: LoopSpec, bounds: Bounds },
    Economic { ctrl: NonLinMpc<PendulumWork>, plant: Model, spec: LoopSpec, bounds: Bounds },
    Successive { ctrl: LinMpc, model: NonlinearModel, plant: Model, spec: LoopSpec, bounds: Bounds },
    Estimation { est: StateEstimator, plant: Model, u: Schedule, spec: LoopSpec },
}

/// Plot bounds copied into the record.
#[derive(Clone, Debug, Default)]
pub struct Bounds {
    pub u: Option<(Vec<f64>, Vec<f64>)>,
    pub y: Option<(Vec<f64>, Vec<f64>)>,
}

impl Built {
    pub fn run(&self) -> Result<SimRecord> {
        let (mut rec, bounds) = match self {
            Built::Linear { ctrl, plant, spec, bounds } => {
                (run_closed_loop(&mut ctrl.clone(), &mut plant.clone(), spec)?, bounds)
            }
            Built::Nonlinear { ctrl, plant, spec, bounds } => {
                (run_closed_loop(&mut ctrl.clone(), &mut plant.clone(), spec)?, bounds)
            }
            Built::Economic { ctrl, plant, spec, bounds } => {
                (run_closed_loop(&mut ctrl.clone(), &mut plant.clone(), spec)?, bounds)
            }
            Built::Successive { ctrl, model, plant, spec, bounds } => {
                let nx = model.nx();
                let d = model.dop().clone();
                let rec = run_closed_loop_with(&mut ctrl.clone(), &mut plant.clone(), spec, |c: &mut LinMpc, xhat, u| {
                    c.set_model(linearize(model, &xhat.as_slice()[..nx], u.as_slice(), d.as_slice())?)
                })?;
                (rec, bounds)
            }
            Built::Estimation { est, plant, u, spec } => {
                return run_estimation_only(&mut est.clone(), &mut plant.clone(), u, spec);
            }
        };
        if let Some((lo, hi)) = &bounds.u {
            rec.u_min.clone_from(lo);
            rec.u_max.clone_from(hi);
        }
        if let Some((lo, hi)) = &bounds.y {
            rec.y_min.clone_from(lo);
            rec.y_max.clone_from(hi);
        }
        Ok(rec)
    }

    /// Controller or estimator description.
    pub fn summary(&self) -> String {
        match self {
            Built::Linear { ctrl, .. } | Built::Successive { ctrl, .. } => ctrl.summary(),
            Built::Nonlinear { ctrl, .. } => ctrl.summary(),
            Built::Economic { ctrl, .. } => ctrl.summary(),
            Built::Estimation { est, .. } => est.summary(),
        }
    }
}

fn noise(std: Option<Vec<f64>>, seed: u64) -> Option<Noise> {
    std.map(|std| Noise { std, seed })
}

fn build_cstr(c: &CstrScenario) -> Result<Built> {
    if c.n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let cfg = MpcConfig {
        hp: c.hp,
        hc: c.hc,
        mwt: c.mwt.clone(),
        nwt: c.nwt.clone(),
        ..Default::default()
    };
    let plant = cstr_model()?;
    let model = if c.feedforward { cstr_model_with_feedforward()? } else { plant.clone() };
    let nx = model.a.nrows();
    let est_cfg = EstimatorConfig {
        sigma_q: Some(c.sigma_q.clone().unwrap_or_else(|| vec![1.0 / nx as f64; nx])),
        sigma_r: c.sigma_r.clone(),
        sigma_q_int_ym: c.sigma_q_int_ym.clone(),
        ..Default::default()
    };
    let est = StateEstimator::new(EstimatorKind::SteadyKalman, model, &est_cfg)?;
    let mut ctrl = LinMpc::new(est, &cfg)?;
    ctrl.set_constraints(&ConstraintSpec {
        y_min: Some(c.y_min.clone()),
        ..Default::default()
    })?;
    // Changes falling outside a shortened run are dropped.
    let sched = |first: Schedule, step: usize, v: &[f64]| if step < c.n { first.then(step, v) } else { first };
    let ry = sched(Schedule::constant(&CSTR_YOP), 25, &[48.0, 35.0]);
    let load = sched(Schedule::constant(&[0.0, 0.0]), 50, &[0.0, -10.0]);
    let mut spec = LoopSpec::new(c.n, ry);
    if c.feedforward {
        spec.d = Some(sched(Schedule::constant(&[20.0]), 50, &[10.0]));
    }
    spec.load = Some(load);
    spec.noise = noise(c.y_noise.clone(), c.seed);
    let bounds = Bounds {
        u: None,
        y: Some((c.y_min.clone(), vec![f64::INFINITY; 2])),
    };
    Ok(Built::Linear {
        ctrl,
        plant: plant.into(),
        spec,
        bounds,
    })
}

fn pendulum_estimator_cfg(i_ym: Option<Vec<usize>>) -> EstimatorConfig {
    EstimatorConfig {
        sigma_q: Some(vec![0.1, 1.0]),
        sigma_r: Some(vec![5.0]),
        nint_u: Some(vec![1]),
        sigma_q_int_u: Some(vec![0.1]),
        i_ym,
        ..Default::default()
    }
}

fn build_pendulum(p: &PendulumScenario) -> Result<Built> {
    use PendulumController::*;
    if p.n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let empc = p.controller == Empc;
    let model = pendulum_model(empc, 1.0)?;
    let plant: Model = pendulum_model(empc, p.friction_factor)?.into();
    let ny = model.ny();
    let y_noise = p.y_noise.map(|s| {
        let mut v = vec![0.0; ny];
        v[0] = s;
        v
    });

    if p.controller == Estimator {
        let est = StateEstimator::new(EstimatorKind::Unscented, model, &pendulum_estimator_cfg(None))?;
        let mut spec = LoopSpec::new(p.n, Schedule::constant(&[]));
        spec.noise = noise(y_noise, p.seed);
        return Ok(Built::Estimation {
            est,
            plant,
            u: Schedule::constant(&[p.u_est]),
            spec,
        });
    }

    let (x0, ry, y_step) = match p.test {
        PendulumTest::Track => (vec![0.0, 0.0], p.setpoint, 0.0),
        PendulumTest::Regulate => (vec![PI, 0.0], p.setpoint, p.y_step),
    };
    let xhat0 = vec![x0[0], x0[1], 0.0];
    let mut ry_v = vec![0.0; ny];
    ry_v[0] = ry;
    let mut step_v = vec![0.0; ny];
    step_v[0] = y_step;
    let mut mwt = vec![0.0; ny];
    mwt[0] = p.mwt;
    let mut spec = LoopSpec::new(p.n, Schedule::constant(&ry_v));
    if y_step != 0.0 {
        spec.y_step = Some(Schedule::constant(&step_v));
    }
    spec.x0 = Some(x0.clone());
    spec.xhat0 = Some(xhat0);
    spec.noise = noise(y_noise, p.seed);
    let cfg = MpcConfig {
        hp: p.hp,
        hc: p.hc,
        mwt: Some(mwt),
        nwt: Some(vec![p.nwt]),
        cwt: f64::INFINITY,
        ewt: if empc { p.ewt } else { 0.0 },
        ..Default::default()
    };
    let ub = p.u_bound;
    let limits = ConstraintSpec {
        u_min: Some(vec![-ub]),
        u_max: Some(vec![ub]),
        ..Default::default()
    };
    let bounds = Bounds {
        u: Some((vec![-ub], vec![ub])),
        y: None,
    };
    Ok(match p.controller {
        Nmpc => {
            let est = StateEstimator::new(EstimatorKind::Unscented, model, &pendulum_estimator_cfg(None))?;
            let mut ctrl = NonLinMpc::new(est, &cfg)?;
            ctrl.set_constraints(&limits)?;
            Built::Nonlinear { ctrl, plant, spec, bounds }
        }
        Empc => {
            let est = StateEstimator::new(EstimatorKind::Unscented, model, &pendulum_estimator_cfg(Some(vec![0])))?;
            let mut ctrl = NonLinMpc::with_economic(est, &cfg, PendulumWork, vec![PENDULUM_TS])?;
            ctrl.set_constraints(&limits)?;
            Built::Economic { ctrl, plant, spec, bounds }
        }
        Slmpc => {
            let lin = linearize(&model, &x0, &[0.0], &[])?;
            let est = StateEstimator::new(EstimatorKind::Kalman, lin, &pendulum_estimator_cfg(None))?;
            let mut ctrl = LinMpc::new(est, &cfg)?;
            ctrl.set_constraints(&limits)?;
            Built::Successive {
                ctrl,
                model,
                plant,
                spec,
                bounds,
            }
        }
        Estimator => unreachable!("handled above"),
    })
}

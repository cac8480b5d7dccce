//! Closed-loop and open-loop simulation, logging and timing.
//!
//! The closed loop follows the usual ordering at every step `k`: measure the
//! plant, prepare the estimate, compute the move, log, update the estimate,
//! then advance the plant with the move plus any load.

mod cases;
mod export;

pub use cases::{
    cstr_model, cstr_model_with_feedforward, pendulum_model, Built, CstrScenario, Pendulum, PendulumController,
    PendulumScenario, PendulumTest, PendulumWork, Scenario,
};
pub use export::{export_csv, export_svg, parse_csv, to_csv_string, to_svg_string, PlotOptions};

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::{MoveStatus, Predictive, Preview};
use crate::error::{check_len, Error, Result};
use crate::estimator::StateEstimator;
use crate::model::{Model, SimModel};

/// Piecewise-constant signal: each change applies from its (0-based) step on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub changes: Vec<(usize, Vec<f64>)>,
}

impl Schedule {
    pub fn constant(v: &[f64]) -> Self {
        Schedule { changes: vec![(0, v.to_vec())] }
    }

    /// Adds a change at `step`.
    pub fn then(mut self, step: usize, v: &[f64]) -> Self {
        self.changes.push((step, v.to_vec()));
        self
    }

    pub fn width(&self) -> usize {
        self.changes.first().map_or(0, |c| c.1.len())
    }

    pub fn at(&self, k: usize) -> &[f64] {
        let mut cur: &[f64] = &[];
        for (s, v) in &self.changes {
            if *s <= k {
                cur = v;
            }
        }
        cur
    }

    fn validate(&self, what: &'static str, width: usize, n: usize) -> Result<()> {
        let first = self.changes.first().map(|c| c.0);
        if first != Some(0) {
            return Err(Error::InvalidArgument(format!("{what} schedule must start at step 0")));
        }
        let mut prev = 0;
        for (i, (s, v)) in self.changes.iter().enumerate() {
            check_len(what, width, v.len())?;
            if i > 0 && *s <= prev {
                return Err(Error::InvalidArgument(format!("{what} schedule steps must increase")));
            }
            if *s >= n.max(1) {
                return Err(Error::InvalidArgument(format!("{what} schedule step {s} is outside 0..{n}")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("schedule"));
            }
            prev = *s;
        }
        Ok(())
    }
}

/// Gaussian measurement noise with per-channel standard deviations.
///
/// Samples come from ChaCha8 seeded with `seed`, drawn channel by channel at
/// every step, so a given seed always yields the same sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub std: Vec<f64>,
    pub seed: u64,
}

struct NoiseSource {
    rng: ChaCha8Rng,
    dists: Vec<Normal<f64>>,
}

impl NoiseSource {
    fn new(noise: &Option<Noise>, ny: usize) -> Result<Option<Self>> {
        let Some(n) = noise else { return Ok(None) };
        check_len("noise std", ny, n.std.len())?;
        let dists = n
            .std
            .iter()
            .map(|&s| Normal::new(0.0, s).map_err(|e| Error::InvalidArgument(format!("noise std {s}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(n.seed),
            dists,
        }))
    }

    fn add(&mut self, y: &mut DVector<f64>) {
        for (v, d) in y.iter_mut().zip(&self.dists) {
            *v += d.sample(&mut self.rng);
        }
    }
}

/// Everything a run needs besides the controller and the plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSpec {
    pub n: usize,
    /// Output setpoints (absolute).
    pub ry: Schedule,
    /// Measured disturbances passed to the controller; `None` when it has none.
    pub d: Option<Schedule>,
    /// Load added to the plant input.
    pub load: Option<Schedule>,
    /// Step added to the plant output before measurement.
    pub y_step: Option<Schedule>,
    /// Initial plant state (absolute).
    pub x0: Option<Vec<f64>>,
    /// Initial augmented estimate; when absent the estimator is initialized
    /// at steady state from the first measurement.
    pub xhat0: Option<Vec<f64>>,
    pub noise: Option<Noise>,
}

impl LoopSpec {
    pub fn new(n: usize, ry: Schedule) -> Self {
        LoopSpec {
            n,
            ry,
            d: None,
            load: None,
            y_step: None,
            x0: None,
            xhat0: None,
            noise: None,
        }
    }
}

/// Per-step solver diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiag {
    pub iterations: usize,
    pub degraded: bool,
    pub cost: f64,
}

/// Logged trajectories; every series holds one row per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub ts: f64,
    pub t: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub ry: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub diag: Vec<StepDiag>,
    pub u_names: Vec<String>,
    pub y_names: Vec<String>,
    /// Bounds drawn on the plots; infinite entries are skipped.
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
}

impl SimRecord {
    fn empty(ts: f64, u_names: &[String], y_names: &[String]) -> Self {
        let (nu, ny) = (u_names.len(), y_names.len());
        SimRecord {
            ts,
            t: vec![],
            u: vec![],
            y: vec![],
            ry: vec![],
            x: vec![],
            xhat: vec![],
            d: vec![],
            diag: vec![],
            u_names: u_names.to_vec(),
            y_names: y_names.to_vec(),
            u_min: vec![f64::NEG_INFINITY; nu],
            u_max: vec![f64::INFINITY; nu],
            y_min: vec![f64::NEG_INFINITY; ny],
            y_max: vec![f64::INFINITY; ny],
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Channel `i` of a series as a column.
    pub fn column(series: &[Vec<f64>], i: usize) -> Vec<f64> {
        series.iter().map(|r| r[i]).collect()
    }

    /// True when all logged series are bitwise equal (names and bounds ignored).
    pub fn same_values(&self, other: &SimRecord) -> bool {
        let bits = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(r, s)| r.len() == s.len() && r.iter().zip(s).all(|(x, y)| x.to_bits() == y.to_bits()))
        };
        let t_eq = self.t.len() == other.t.len() && self.t.iter().zip(&other.t).all(|(a, b)| a.to_bits() == b.to_bits());
        t_eq && bits(&self.u, &other.u)
            && bits(&self.y, &other.y)
            && bits(&self.ry, &other.ry)
            && bits(&self.x, &other.x)
            && bits(&self.xhat, &other.xhat)
            && bits(&self.d, &other.d)
            && self.diag.len() == other.diag.len()
            && self.diag.iter().zip(&other.diag).all(|(a, b)| {
                a.iterations == b.iterations && a.degraded == b.degraded && a.cost.to_bits() == b.cost.to_bits()
            })
    }

    fn push(&mut self, k: usize, u: &DVector<f64>, y: &DVector<f64>, ry: &[f64], x: DVector<f64>, xhat: DVector<f64>, d: &[f64], diag: StepDiag) {
        self.t.push(k as f64 * self.ts);
        self.u.push(u.as_slice().to_vec());
        self.y.push(y.as_slice().to_vec());
        self.ry.push(ry.to_vec());
        self.x.push(x.as_slice().to_vec());
        self.xhat.push(xhat.as_slice().to_vec());
        self.d.push(d.to_vec());
        self.diag.push(diag);
    }
}

fn plant_output(plant: &Model, spec: &LoopSpec, k: usize, noise: &mut Option<NoiseSource>) -> Result<DVector<f64>> {
    let mut y = plant.output(plant.dop().as_slice())?;
    if let Some(s) = &spec.y_step {
        y += DVector::from_column_slice(s.at(k));
    }
    if let Some(n) = noise {
        n.add(&mut y);
    }
    Ok(y)
}

fn validate(spec: &LoopSpec, plant: &Model, ny: usize, nd: usize, nry: usize) -> Result<()> {
    check_len("plant outputs", ny, plant.ny())?;
    spec.ry.validate("ry", nry, spec.n)?;
    match &spec.d {
        Some(d) => d.validate("d", nd, spec.n)?,
        None => check_len("measured disturbances", nd, 0)?,
    }
    if let Some(l) = &spec.load {
        l.validate("load", plant.nu(), spec.n)?;
    }
    if let Some(s) = &spec.y_step {
        s.validate("y_step", ny, spec.n)?;
    }
    Ok(())
}

fn select(y: &DVector<f64>, rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| y[i]).collect()
}

/// Runs `ctrl` against `plant` for `spec.n` steps.
pub fn run_closed_loop<C: Predictive>(ctrl: &mut C, plant: &mut Model, spec: &LoopSpec) -> Result<SimRecord> {
    run_closed_loop_with(ctrl, plant, spec, |_, _, _| Ok(()))
}

/// Like [`run_closed_loop`], with `after_move(ctrl, x̂, u)` called between the
/// move and the estimator update (used to swap linearized models online).
pub fn run_closed_loop_with<C, F>(ctrl: &mut C, plant: &mut Model, spec: &LoopSpec, mut after_move: F) -> Result<SimRecord>
where
    C: Predictive,
    F: FnMut(&mut C, &DVector<f64>, &DVector<f64>) -> Result<()>,
{
    let aug = ctrl.estimator().model();
    let (ny, nd, nu) = (aug.ny(), aug.nd(), aug.nu());
    let i_ym = aug.i_ym().to_vec();
    let base = aug.base();
    let uop = base.uop().clone();
    let names = base.names().clone();
    validate(spec, plant, ny, nd, ny)?;
    check_len("plant inputs", nu, plant.nu())?;
    if let Some(x0) = &spec.x0 {
        plant.set_state(x0)?;
    }
    let mut noise = NoiseSource::new(&spec.noise, ny)?;
    let d_at = |k: usize| spec.d.as_ref().map_or(&[][..], |s| s.at(k));
    match &spec.xhat0 {
        Some(xh) => ctrl.estimator_mut().set_estimate(xh)?,
        None => {
            let y = plant_output(plant, spec, 0, &mut None)?;
            ctrl.init_state(uop.as_slice(), &select(&y, &i_ym), d_at(0))?;
        }
    }

    let mut rec = SimRecord::empty(plant.ts(), &names.u, &names.y);
    for k in 0..spec.n {
        let step = |e: Error| e.at_step(k);
        let d = d_at(k);
        let ry = spec.ry.at(k);
        let y = plant_output(plant, spec, k, &mut noise).map_err(step)?;
        let ym = select(&y, &i_ym);
        ctrl.prepare(&ym, d).map_err(step)?;
        let xhat = ctrl.estimator().estimate();
        let info = ctrl.move_input(&Preview::new(ry, d)).map_err(step)?;
        after_move(ctrl, &xhat, &info.u).map_err(step)?;
        let diag = StepDiag {
            iterations: info.iterations,
            degraded: info.status == MoveStatus::Fallback || ctrl.estimator().degraded(),
            cost: info.cost,
        };
        rec.push(k, &info.u, &y, ry, plant.state(), xhat, d, diag);
        ctrl.update(info.u.as_slice(), &ym, d).map_err(step)?;
        let mut up = info.u.clone();
        if let Some(l) = &spec.load {
            up += DVector::from_column_slice(l.at(k));
        }
        plant.step(up.as_slice(), plant.dop().clone().as_slice()).map_err(step)?;
    }
    Ok(rec)
}

/// Applies the scheduled input `u` to both the plant and the estimator.
/// `spec.ry` is ignored and logged as empty.
pub fn run_estimation_only(est: &mut StateEstimator, plant: &mut Model, u: &Schedule, spec: &LoopSpec) -> Result<SimRecord> {
    let aug = est.model();
    let (ny, nd, nu) = (aug.ny(), aug.nd(), aug.nu());
    let i_ym = aug.i_ym().to_vec();
    let names = aug.base().names().clone();
    validate(&LoopSpec { ry: Schedule::constant(&[]), ..spec.clone() }, plant, ny, nd, 0)?;
    u.validate("u", nu, spec.n)?;
    if let Some(x0) = &spec.x0 {
        plant.set_state(x0)?;
    }
    let mut noise = NoiseSource::new(&spec.noise, ny)?;
    let d_at = |k: usize| spec.d.as_ref().map_or(&[][..], |s| s.at(k));
    match &spec.xhat0 {
        Some(xh) => est.set_estimate(xh)?,
        None => {
            let y = plant_output(plant, spec, 0, &mut None)?;
            est.init_state(u.at(0), &select(&y, &i_ym), d_at(0))?;
        }
    }
    let mut rec = SimRecord::empty(plant.ts(), &names.u, &names.y);
    for k in 0..spec.n {
        let step = |e: Error| e.at_step(k);
        let (d, uk) = (d_at(k), u.at(k));
        let y = plant_output(plant, spec, k, &mut noise).map_err(step)?;
        let ym = select(&y, &i_ym);
        est.prepare(&ym, d).map_err(step)?;
        let diag = StepDiag {
            iterations: 0,
            degraded: est.degraded(),
            cost: 0.0,
        };
        rec.push(k, &DVector::from_column_slice(uk), &y, &[], plant.state(), est.estimate(), d, diag);
        est.update(uk, &ym, d).map_err(step)?;
        let mut up = DVector::from_column_slice(uk);
        if let Some(l) = &spec.load {
            up += DVector::from_column_slice(l.at(k));
        }
        plant.step(up.as_slice(), plant.dop().clone().as_slice()).map_err(step)?;
    }
    Ok(rec)
}

/// Mechanical work `Ts Σ τ(k) ω(k)` over all steps but the last, with τ the
/// first input and ω the second plant state.
pub fn compute_work(rec: &SimRecord) -> Result<f64> {
    let n = rec.len();
    if rec.x.len() != n || rec.u.len() != n {
        return Err(Error::InvalidArgument("record is missing the input or state log".into()));
    }
    if rec.x.iter().any(|r| r.len() < 2) || rec.u.iter().any(|r| r.is_empty()) {
        return Err(Error::InvalidArgument("work needs a torque input and a speed state".into()));
    }
    let s: f64 = (0..n.saturating_sub(1)).map(|k| rec.u[k][0] * rec.x[k][1]).sum();
    Ok(rec.ts * s)
}

/// Wall-clock statistics in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub samples: Vec<f64>,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Timing {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let mut s = samples.clone();
        s.sort_by(f64::total_cmp);
        Timing {
            median: quantile(&s, 0.5),
            q1: quantile(&s, 0.25),
            q3: quantile(&s, 0.75),
            samples,
        }
    }
}

/// Times `repeats` sequential calls of `run` after `warmup` untimed calls.
pub fn benchmark<F: FnMut() -> Result<()>>(repeats: usize, warmup: usize, mut run: F) -> Result<Timing> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    for _ in 0..warmup {
        run()?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        run()?;
        samples.push(t0.elapsed().as_secs_f64());
    }
    Ok(Timing::from_samples(samples))
}

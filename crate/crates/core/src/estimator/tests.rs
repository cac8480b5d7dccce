use super::*;
use crate::autodiff::Real;
use crate::linalg::min_sym_eigenvalue;
use crate::model::{Dynamics, NonlinearModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cstr_like() -> LinearModel {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.8]);
    let bu = DMatrix::from_row_slice(2, 2, &[0.2, 0.2, -0.1, 0.1]);
    LinearModel::without_disturbance(a, bu, DMatrix::identity(2, 2), 2.0)
        .unwrap()
        .with_operating_point(&[20.0, 20.0], &[50.0, 30.0], &[])
        .unwrap()
}

fn build(kind: EstimatorKind, cfg: &EstimatorConfig) -> StateEstimator {
    StateEstimator::new(kind, cstr_like(), cfg).unwrap()
}

/// Random input/measurement sequence around the operating point.
fn signals(n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u = vec![20.0 + rng.random_range(-2.0..2.0), 20.0 + rng.random_range(-2.0..2.0)];
            let y = vec![50.0 + rng.random_range(-1.0..1.0), 30.0 + rng.random_range(-1.0..1.0)];
            (u, y)
        })
        .collect()
}

fn run(est: &mut StateEstimator, sig: &[(Vec<f64>, Vec<f64>)]) -> Vec<DVector<f64>> {
    sig.iter()
        .map(|(u, y)| {
            let x = est.prepare(y, &[]).unwrap();
            est.update(u, y, &[]).unwrap();
            x
        })
        .collect()
}

fn max_gap(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

#[test]
fn perfect_sensor_copies_measurement() {
    let cfg = EstimatorConfig {
        sigma_r: Some(vec![1e-9, 1e-9]),
        nint_ym: Some(vec![0, 0]),
        ..Default::default()
    };
    let mut kf = build(EstimatorKind::Kalman, &cfg);
    let x = kf.prepare(&[51.0, 29.5], &[]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] + 0.5).abs() < 1e-9);
}

#[test]
fn steady_gain_matches_dare() {
    let kf = build(EstimatorKind::SteadyKalman, &EstimatorConfig::default());
    let aug = kf.model();
    let (_, k) = solve_dare(&aug.linear().unwrap().a, &aug.cm().unwrap(), kf.q(), kf.r()).unwrap();
    assert!((kf.gain().unwrap() - k).amax() < 1e-14);
    let mut s = kf.clone();
    let x0 = s.estimate_internal().clone();
    let y = [50.7, 30.2];
    let x = s.prepare(&y, &[]).unwrap();
    let innov = DVector::from_column_slice(&y) - aug.hm_f64(&x0, &[]);
    let expected = aug.to_absolute(&(x0 + kf.gain().unwrap() * innov));
    assert!((x - expected).amax() < 1e-12);
}

#[test]
fn ukf_ekf_mhe_agree_with_kalman_on_linear_model() {
    let sig = signals(50, 3);
    let cfg = EstimatorConfig { he: 60, ..Default::default() };
    let kf = run(&mut build(EstimatorKind::Kalman, &cfg), &sig);
    let ukf = run(&mut build(EstimatorKind::Unscented, &cfg), &sig);
    let ekf = run(&mut build(EstimatorKind::Extended, &cfg), &sig);
    let mhe = run(&mut build(EstimatorKind::MovingHorizon, &cfg), &sig);
    assert!(max_gap(&kf, &ukf) < 1e-8, "ukf {}", max_gap(&kf, &ukf));
    assert!(max_gap(&kf, &ekf) < 1e-8, "ekf {}", max_gap(&kf, &ekf));
    assert!(max_gap(&kf, &mhe) < 1e-6, "mhe {}", max_gap(&kf, &mhe));
}

#[test]
fn short_window_mhe_matches_kalman() {
    let sig = signals(30, 8);
    for he in [1, 4] {
        let cfg = EstimatorConfig { he, ..Default::default() };
        let kf = run(&mut build(EstimatorKind::Kalman, &cfg), &sig);
        let mut est = build(EstimatorKind::MovingHorizon, &cfg);
        let mhe = run(&mut est, &sig);
        assert!(max_gap(&kf, &mhe) < 1e-8, "He={he}: {}", max_gap(&kf, &mhe));
    }
}

#[test]
fn window_grows_to_horizon() {
    let mut est = build(EstimatorKind::MovingHorizon, &EstimatorConfig { he: 5, ..Default::default() });
    for (k, (u, y)) in signals(8, 1).iter().enumerate() {
        est.prepare(y, &[]).unwrap();
        assert_eq!(est.mhe_info().unwrap().nk, (k + 1).min(5));
        est.update(u, y, &[]).unwrap();
    }
}

#[test]
fn hard_and_soft_noise_bounds() {
    let sig: Vec<_> = (0..6).map(|_| (vec![20.0, 20.0], vec![52.0, 30.0])).collect();
    let mut bounds = MheBounds::unbounded(4, 2);
    bounds.w_max = vec![0.0; 4];
    let mut hard = build(EstimatorKind::MovingHorizon, &EstimatorConfig::default());
    hard.set_mhe_bounds(bounds.clone()).unwrap();
    run(&mut hard, &sig);
    let info = hard.mhe_info().unwrap();
    assert!(info.w.iter().all(|w| w.max() <= 1e-9));
    assert!(info.w.iter().any(|w| w.max() > -1e-9), "some noise sits on the bound");

    let mut soft = build(EstimatorKind::MovingHorizon, &EstimatorConfig { mhe_cwt: 1.0, ..Default::default() });
    soft.set_mhe_bounds(bounds).unwrap();
    run(&mut soft, &sig);
    let info = soft.mhe_info().unwrap();
    assert!(info.eps > 1e-6);
    assert!(info.w.iter().any(|w| w.max() > 1e-6));
    assert!(info.w.iter().all(|w| w.max() <= info.eps + 1e-9));
}

#[test]
fn current_and_predictor_forms_line_up() {
    let sig = signals(20, 5);
    let mut cur = build(EstimatorKind::Kalman, &EstimatorConfig::default());
    let mut pred = build(EstimatorKind::Kalman, &EstimatorConfig { form: Form::Predictor, ..Default::default() });
    for (u, y) in &sig {
        cur.prepare(y, &[]).unwrap();
        let xc = cur.update(u, y, &[]).unwrap();
        pred.prepare(y, &[]).unwrap();
        let xp = pred.update(u, y, &[]).unwrap();
        assert!((xc - xp).amax() < 1e-10);
    }
}

#[test]
fn call_order_is_enforced() {
    let mut kf = build(EstimatorKind::Kalman, &EstimatorConfig::default());
    assert!(matches!(kf.update(&[20.0, 20.0], &[50.0, 30.0], &[]), Err(Error::CallOrder(_))));
    kf.prepare(&[50.0, 30.0], &[]).unwrap();
    assert!(matches!(kf.prepare(&[50.0, 30.0], &[]), Err(Error::CallOrder(_))));
    assert!(matches!(kf.update(&[20.0, 20.0], &[f64::NAN, 30.0], &[]), Err(Error::NonFinite(_))));
}

#[test]
fn init_state_at_rest_and_with_offset() {
    let mut kf = build(EstimatorKind::Kalman, &EstimatorConfig::default());
    let x = kf.init_state(&[20.0, 20.0], &[50.0, 30.0], &[]).unwrap();
    assert!(x.amax() < 1e-12);
    let x = kf.init_state(&[20.0, 20.0], &[51.0, 30.0], &[]).unwrap();
    assert!((x[2] - 1.0).abs() < 1e-10 && x[3].abs() < 1e-10);
    assert!(x.rows(0, 2).amax() < 1e-10);
    let xi = kf.estimate_internal().clone();
    assert!((kf.model().hm_f64(&xi, &[]) - DVector::from_vec(vec![51.0, 30.0])).amax() < 1e-10);
    // Bumpless: the first correction sees no innovation.
    let before = kf.estimate();
    let after = kf.prepare(&[51.0, 30.0], &[]).unwrap();
    assert!((before - after).amax() < 1e-10);
}

#[test]
fn luenberger_places_requested_poles() {
    let poles: Vec<Complex<f64>> = [0.5, 0.55, 0.6, 0.65].iter().map(|&p| Complex::new(p, 0.0)).collect();
    let est = build(EstimatorKind::Luenberger, &EstimatorConfig { poles: Some(poles.clone()), ..Default::default() });
    let l = est.model().linear().unwrap();
    let cm = est.model().cm().unwrap();
    let k = est.gain().unwrap();
    let closed = (DMatrix::identity(4, 4) - k * &cm) * &l.a;
    let mut eig: Vec<f64> = closed.complex_eigenvalues().iter().map(|c| c.re).collect();
    eig.sort_by(f64::total_cmp);
    for (e, p) in eig.iter().zip(&poles) {
        assert!((e - p.re).abs() < 1e-6);
    }
    assert!(build(EstimatorKind::Luenberger, &EstimatorConfig::default()).gain().is_some());
}

#[test]
fn internal_model_tracks_constant_bias() {
    let mut im = build(EstimatorKind::Internal, &EstimatorConfig::default());
    assert_eq!(im.nx_hat(), 2);
    for _ in 0..5 {
        im.prepare(&[50.0, 30.0], &[]).unwrap();
        assert!(im.output_bias().amax() < 1e-12);
        im.update(&[20.0, 20.0], &[50.0, 30.0], &[]).unwrap();
    }
    im.prepare(&[52.0, 29.0], &[]).unwrap();
    assert!((im.output_bias() - DVector::from_vec(vec![2.0, -1.0])).amax() < 1e-12);

    let unstable = LinearModel::without_disturbance(DMatrix::identity(1, 1) * 1.01, DMatrix::identity(1, 1), DMatrix::identity(1, 1), 1.0).unwrap();
    assert!(matches!(
        StateEstimator::new(EstimatorKind::Internal, unstable, &EstimatorConfig::default()),
        Err(Error::Unstable(_))
    ));
}

#[test]
fn covariance_stays_symmetric_psd() {
    let sig = signals(1000, 11);
    for kind in [EstimatorKind::Kalman, EstimatorKind::Unscented, EstimatorKind::Extended] {
        let mut est = build(kind, &EstimatorConfig::default());
        for (u, y) in &sig {
            est.prepare(y, &[]).unwrap();
            est.update(u, y, &[]).unwrap();
            let p = est.covariance();
            assert!((p - p.transpose()).amax() == 0.0);
            assert!(min_sym_eigenvalue(p) >= -1e-10);
        }
    }
}

#[test]
fn update_with_exact_state_follows_model() {
    let cfg = EstimatorConfig {
        nint_ym: Some(vec![0, 0]),
        ..Default::default()
    };
    let mut est = build(EstimatorKind::Kalman, &cfg);
    let mut plant = cstr_like();
    plant.set_state(&[1.0, -0.5]).unwrap();
    est.set_estimate(&[1.0, -0.5]).unwrap();
    let y = plant.output(&[]).unwrap();
    est.prepare(y.as_slice(), &[]).unwrap();
    let x = est.update(&[21.0, 19.0], y.as_slice(), &[]).unwrap();
    plant.step(&[21.0, 19.0], &[]).unwrap();
    assert!((x - plant.state()).amax() < 1e-12);
}

#[test]
fn snapshot_round_trip_resumes_identically() {
    let sig = signals(12, 2);
    let mut a = build(EstimatorKind::MovingHorizon, &EstimatorConfig { he: 4, ..Default::default() });
    run(&mut a, &sig[..6]);
    let json = a.snapshot().to_json().unwrap();
    let mut b = build(EstimatorKind::MovingHorizon, &EstimatorConfig { he: 4, ..Default::default() });
    b.restore(&EstimatorSnapshot::from_json(&json).unwrap()).unwrap();
    let ra = run(&mut a, &sig[6..]);
    let rb = run(&mut b, &sig[6..]);
    assert_eq!(ra, rb);
}

#[test]
fn set_model_keeps_absolute_estimate() {
    let mut kf = build(EstimatorKind::Kalman, &EstimatorConfig::default());
    kf.set_estimate(&[1.0, 2.0, 0.5, 0.0]).unwrap();
    let moved = cstr_like().with_operating_point(&[25.0, 25.0], &[55.0, 31.0], &[]).unwrap();
    let before = kf.estimate();
    kf.set_model(moved.clone()).unwrap();
    assert!((kf.estimate() - before).amax() < 1e-12);
    let mut skf = build(EstimatorKind::SteadyKalman, &EstimatorConfig::default());
    assert!(matches!(skf.set_model(moved), Err(Error::Unsupported(_))));
}

struct Pendulum;
impl Dynamics for Pendulum {
    fn state<T: Real>(&self, out: &mut [T], x: &[T], u: &[T], _d: &[T], p: &[f64]) {
        let (g, l, k, m) = (p[0], p[1], p[2], p[3]);
        out[0] = x[1];
        out[1] = x[0].sin() * (-g / l) - x[1] * (k / m) + u[0] / (m * l * l);
    }
    fn output<T: Real>(&self, out: &mut [T], x: &[T], _d: &[T], _p: &[f64]) {
        out[0] = x[0] * (180.0 / std::f64::consts::PI);
    }
}

fn pendulum() -> NonlinearModel {
    NonlinearModel::new(Pendulum, vec![9.8, 0.4, 1.2, 0.3], 0.1, 1, 2, 1, 0).unwrap()
}

#[test]
fn nonlinear_estimators_share_structure() {
    let cfg = EstimatorConfig {
        sigma_q: Some(vec![0.1, 1.0]),
        sigma_r: Some(vec![5.0]),
        nint_u: Some(vec![1]),
        sigma_q_int_u: Some(vec![0.1]),
        ..Default::default()
    };
    let ukf = StateEstimator::new(EstimatorKind::Unscented, pendulum(), &cfg).unwrap();
    assert!(ukf.summary().contains("3 estimated states"));
    assert!(ukf.summary().contains("1 integrating states"));
    assert!(StateEstimator::new(EstimatorKind::Kalman, pendulum(), &cfg).is_err());
}

#[test]
fn ekf_and_ukf_propagate_similar_covariance() {
    let cfg = EstimatorConfig {
        nint_ym: Some(vec![0]),
        sigma_p0: Some(vec![1e-3, 1e-3]),
        sigma_q: Some(vec![0.0, 0.0]),
        ..Default::default()
    };
    let mut p = pendulum();
    p.set_state(&[0.3, 0.1]).unwrap();
    let mut ekf = StateEstimator::new(EstimatorKind::Extended, p.clone(), &cfg).unwrap();
    let mut ukf = StateEstimator::new(EstimatorKind::Unscented, p, &cfg).unwrap();
    for est in [&mut ekf, &mut ukf] {
        est.prepare(&[0.3_f64.to_degrees()], &[]).unwrap();
        est.update(&[0.2], &[0.3_f64.to_degrees()], &[]).unwrap();
    }
    let scale = ekf.covariance().amax();
    assert!((ekf.covariance() - ukf.covariance()).amax() < 1e-2 * scale);
    assert!((ekf.estimate() - ukf.estimate()).amax() < 1e-4);
}

#[test]
fn nonlinear_mhe_runs_and_tracks() {
    let cfg = EstimatorConfig {
        sigma_q: Some(vec![0.1, 1.0]),
        sigma_r: Some(vec![5.0]),
        nint_u: Some(vec![1]),
        sigma_q_int_u: Some(vec![0.1]),
        he: 5,
        ..Default::default()
    };
    let mut plant = pendulum();
    plant.set_state(&[0.2, 0.0]).unwrap();
    let mut mhe = StateEstimator::new(EstimatorKind::MovingHorizon, pendulum(), &cfg).unwrap();
    let mut ekf = StateEstimator::new(EstimatorKind::Extended, pendulum(), &cfg).unwrap();
    for _ in 0..30 {
        let y = plant.output(&[]).unwrap();
        mhe.prepare(y.as_slice(), &[]).unwrap();
        ekf.prepare(y.as_slice(), &[]).unwrap();
        assert!(!mhe.degraded());
        mhe.update(&[0.3], y.as_slice(), &[]).unwrap();
        ekf.update(&[0.3], y.as_slice(), &[]).unwrap();
        plant.step(&[0.3], &[]).unwrap();
    }
    let y = plant.output(&[]).unwrap();
    let x = mhe.prepare(y.as_slice(), &[]).unwrap();
    let hm = mhe.model().hm_f64(&x, &[]);
    assert!((hm[0] - y[0]).abs() < 5.0, "{} vs {}", hm[0], y[0]);
}

//! `mpc`: runs the CSTR and pendulum case studies and their benchmarks.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpc_core::sim::{
    benchmark, compute_work, export_csv, export_svg, CstrScenario, PendulumController, PendulumScenario, PendulumTest,
    PlotOptions, Scenario, SimRecord, Timing,
};
use serde_json::json;

const EXIT_USAGE: u8 = 1;
const EXIT_CHECK: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mpc", version, about = "Model predictive control case studies: CSTR and inverted pendulum")]
struct Cli {
    /// Output directory for CSV, SVG and JSON files.
    #[arg(long, global = true, env = "MPC_OUT_DIR", default_value = "./out")]
    out: PathBuf,
    /// Artifact formats to write.
    #[arg(long, global = true, value_enum, value_delimiter = ',', default_value = "csv,svg")]
    format: Vec<Format>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Svg,
    None,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// CSTR level and temperature control with a setpoint change and a load.
    Cstr(CstrArgs),
    /// Inverted pendulum under NMPC, economic MPC, successive linearization
    /// MPC, or the estimator alone.
    Pendulum(PendulumArgs),
    /// Times the case-study scenarios and prints median and quartiles.
    Bench(BenchArgs),
    /// Runs a scenario definition file (JSON).
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct CstrArgs {
    /// Feed the measured load forward to the controller.
    #[arg(long)]
    feedforward: bool,
    /// Number of steps.
    #[arg(long)]
    n: Option<usize>,
    /// Prediction horizon.
    #[arg(long)]
    hp: Option<usize>,
    /// Control horizon.
    #[arg(long)]
    hc: Option<usize>,
    /// Output setpoint weights, one per output.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mwt: Option<Vec<f64>>,
    /// Input move weights, one per input.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    nwt: Option<Vec<f64>>,
    /// Output lower bounds (use -inf for none).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    ymin: Option<Vec<f64>>,
    /// Measurement noise standard deviations, one per output.
    #[arg(long, value_delimiter = ',')]
    y_noise: Option<Vec<f64>>,
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Assert the documented constraint behavior (exit 2 otherwise).
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Nmpc,
    Empc,
    Slmpc,
    Estimator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TestArg {
    Track,
    Regulate,
}

#[derive(Args, Debug)]
struct PendulumArgs {
    #[arg(long, value_enum, default_value = "nmpc")]
    controller: ControllerArg,
    #[arg(long, value_enum, default_value = "track")]
    scenario: TestArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    hp: Option<usize>,
    #[arg(long)]
    hc: Option<usize>,
    /// Angle setpoint weight.
    #[arg(long)]
    mwt: Option<f64>,
    /// Torque move weight.
    #[arg(long)]
    nwt: Option<f64>,
    /// Torque bound magnitude (N·m).
    #[arg(long)]
    umax: Option<f64>,
    /// Economic weight (EMPC only).
    #[arg(long)]
    ewt: Option<f64>,
    /// Plant friction relative to the model's.
    #[arg(long)]
    friction_factor: Option<f64>,
    /// Angle measurement noise standard deviation (deg).
    #[arg(long)]
    y_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Assert the final angle is within 2° of the setpoint and the torque within
    /// its bounds (exit 2 otherwise).
    #[arg(long)]
    check: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Repeats per scenario (default: 500 linear, 50 nonlinear).
    #[arg(long)]
    repeats: Option<usize>,
    /// Untimed warm-up runs per scenario.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    /// Scenarios to time, e.g. cstr,nmpc_track,slmpc_track.
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<String>>,
    /// Assert SLMPC is at least 5× faster than NMPC on tracking (exit 2 otherwise).
    #[arg(long)]
    check: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario definition file.
    file: PathBuf,
}

enum Failure {
    Check(String),
    Runtime(String),
}

type Outcome = std::result::Result<(), Failure>;

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Cstr(a) => cmd_cstr(&cli, a),
        Command::Pendulum(a) => cmd_pendulum(&cli, a),
        Command::Bench(a) => cmd_bench(&cli, a),
        Command::Run(a) => cmd_run(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn write_artifacts(cli: &Cli, scenario: &Scenario, rec: &SimRecord, metrics: serde_json::Value, plot: &PlotOptions) -> Outcome {
    fs::create_dir_all(&cli.out).map_err(|e| Failure::Runtime(format!("{}: {e}", cli.out.display())))?;
    let stem = scenario.label();
    let path = |ext: &str| cli.out.join(format!("{stem}.{ext}"));
    if cli.format.contains(&Format::Csv) {
        export_csv(rec, &path("csv")).map_err(runtime)?;
        log::info!("wrote {}", path("csv").display());
    }
    if cli.format.contains(&Format::Svg) {
        export_svg(rec, &path("svg"), plot).map_err(runtime)?;
        log::info!("wrote {}", path("svg").display());
    }
    if !cli.format.contains(&Format::None) {
        let doc = json!({ "scenario": scenario, "metrics": metrics });
        let text = serde_json::to_string_pretty(&doc).map_err(runtime)?;
        fs::write(path("json"), text).map_err(|e| Failure::Runtime(format!("{}: {e}", path("json").display())))?;
    }
    Ok(())
}

fn timed_run(scenario: &Scenario) -> std::result::Result<(SimRecord, f64), Failure> {
    let built = scenario.build().map_err(runtime)?;
    let t0 = Instant::now();
    let rec = built.run().map_err(runtime)?;
    Ok((rec, t0.elapsed().as_secs_f64()))
}

fn cmd_cstr(cli: &Cli, a: &CstrArgs) -> Outcome {
    let mut s = CstrScenario {
        feedforward: a.feedforward,
        ..Default::default()
    };
    s.n = a.n.unwrap_or(s.n);
    s.hp = a.hp.unwrap_or(s.hp);
    s.hc = a.hc.unwrap_or(s.hc);
    s.mwt = a.mwt.clone().or(s.mwt);
    s.nwt = a.nwt.clone().or(s.nwt);
    s.y_min = a.ymin.clone().unwrap_or(s.y_min);
    s.y_noise = a.y_noise.clone().or(s.y_noise);
    s.seed = a.seed.unwrap_or(s.seed);
    let bound = s.y_min.first().copied().unwrap_or(f64::NEG_INFINITY);
    let scenario = Scenario::Cstr(s.clone());
    let (rec, secs) = timed_run(&scenario)?;

    let yl = SimRecord::column(&rec.y, 0);
    let min_yl = yl.iter().copied().fold(f64::INFINITY, f64::min);
    let violations = yl.iter().filter(|&&v| v < bound).count();
    let last_err: Vec<f64> = rec.y.last().unwrap().iter().zip(rec.ry.last().unwrap()).map(|(y, r)| y - r).collect();
    println!("{}", scenario.label());
    println!("min y_L = {min_yl:.4}");
    println!("steps with y_L < {bound} = {violations}");
    println!("final y - ry = [{}]", last_err.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(", "));
    println!("run time = {secs:.6} s");
    let metrics = json!({ "min_y_L": min_yl, "violations": violations, "final_error": last_err, "seconds": secs });
    write_artifacts(cli, &scenario, &rec, metrics, &PlotOptions {
        title: Some(format!("CSTR{}", if s.feedforward { " with feedforward" } else { "" })),
        ..Default::default()
    })?;

    if a.check {
        if s.feedforward {
            if min_yl < 44.5 {
                return Err(Failure::Check(format!("min y_L = {min_yl:.4} < 44.5 with feedforward")));
            }
        } else if violations == 0 {
            return Err(Failure::Check("expected y_L to drop below its bound after the load".into()));
        }
        println!("check passed");
    }
    Ok(())
}

fn pendulum_scenario(a: &PendulumArgs) -> PendulumScenario {
    let controller = match a.controller {
        ControllerArg::Nmpc => PendulumController::Nmpc,
        ControllerArg::Empc => PendulumController::Empc,
        ControllerArg::Slmpc => PendulumController::Slmpc,
        ControllerArg::Estimator => PendulumController::Estimator,
    };
    let test = match a.scenario {
        TestArg::Track => PendulumTest::Track,
        TestArg::Regulate => PendulumTest::Regulate,
    };
    let mut s = PendulumScenario::new(controller, test);
    s.n = a.n.unwrap_or(s.n);
    s.hp = a.hp.unwrap_or(s.hp);
    s.hc = a.hc.unwrap_or(s.hc);
    s.mwt = a.mwt.unwrap_or(s.mwt);
    s.nwt = a.nwt.unwrap_or(s.nwt);
    s.u_bound = a.umax.unwrap_or(s.u_bound);
    s.ewt = a.ewt.unwrap_or(s.ewt);
    s.friction_factor = a.friction_factor.unwrap_or(s.friction_factor);
    s.y_noise = a.y_noise.or(s.y_noise);
    s.seed = a.seed.unwrap_or(s.seed);
    s
}

fn cmd_pendulum(cli: &Cli, a: &PendulumArgs) -> Outcome {
    let s = pendulum_scenario(a);
    let scenario = Scenario::Pendulum(s.clone());
    let (rec, secs) = timed_run(&scenario)?;
    let work = compute_work(&rec).map_err(runtime)?;
    println!("{}", scenario.label());
    let plot = PlotOptions {
        y_channels: Some(vec![0]),
        show_states: s.controller == PendulumController::Estimator,
        title: Some(format!("Pendulum, {}", s.controller.label())),
        ..Default::default()
    };
    if s.controller == PendulumController::Estimator {
        let err = rec
            .x
            .iter()
            .zip(&rec.xhat)
            .skip(rec.len() / 2)
            .map(|(x, xh)| (x[0] - xh[0]).abs().to_degrees())
            .fold(0.0, f64::max);
        let int = rec.xhat.last().map_or(0.0, |x| x[2]);
        println!("max angle estimate error (second half) = {err:.4} deg");
        println!("final torque integrator estimate = {int:.6}");
        println!("run time = {secs:.6} s");
        write_artifacts(cli, &scenario, &rec, json!({ "angle_error_deg": err, "integrator": int, "seconds": secs }), &plot)?;
        if a.check && err > 3.0 {
            return Err(Failure::Check(format!("angle estimate error {err:.4}° exceeds 3°")));
        }
        if a.check {
            println!("check passed");
        }
        return Ok(());
    }
    let theta = rec.y.last().unwrap()[0];
    let err = theta - s.setpoint;
    let umax = rec.u.iter().map(|u| u[0].abs()).fold(0.0, f64::max);
    let degraded = rec.diag.iter().filter(|d| d.degraded).count();
    println!("final angle = {theta:.4} deg (error {err:.4})");
    println!("W = {work:.6} J");
    println!("max |τ| = {umax:.6} N·m");
    println!("degraded steps = {degraded}");
    println!("run time = {secs:.6} s");
    let metrics = json!({ "final_angle": theta, "final_error": err, "work": work, "max_torque": umax, "degraded": degraded, "seconds": secs });
    write_artifacts(cli, &scenario, &rec, metrics, &plot)?;
    if a.check {
        if err.abs() > 2.0 {
            return Err(Failure::Check(format!("final angle error {err:.4}° exceeds 2°")));
        }
        if umax > s.u_bound + 1e-9 {
            return Err(Failure::Check(format!("torque {umax} exceeds the bound {}", s.u_bound)));
        }
        println!("check passed");
    }
    Ok(())
}

struct BenchCase {
    key: &'static str,
    plant: &'static str,
    control: &'static str,
    test: &'static str,
    solver: &'static str,
    linear: bool,
    scenario: Scenario,
}

fn bench_cases() -> Vec<BenchCase> {
    let cstr = |ff| Scenario::Cstr(CstrScenario {
        feedforward: ff,
        ..Default::default()
    });
    let pend = |c, t| Scenario::Pendulum(PendulumScenario::new(c, t));
    use PendulumController::*;
    use PendulumTest::*;
    let mut v = vec![
        BenchCase { key: "cstr", plant: "CSTR", control: "MPC", test: "W/o d", solver: "AS", linear: true, scenario: cstr(false) },
        BenchCase { key: "cstr_ff", plant: "CSTR", control: "MPC", test: "With d", solver: "AS", linear: true, scenario: cstr(true) },
    ];
    for (c, ckey, solver, linear) in [(Nmpc, "nmpc", "SQ", false), (Empc, "empc", "SQ", false), (Slmpc, "slmpc", "AS", true)] {
        for (t, tkey, tname) in [(Track, "track", "Track."), (Regulate, "regulate", "Regul.")] {
            v.push(BenchCase {
                key: Box::leak(format!("{ckey}_{tkey}").into_boxed_str()),
                plant: "Pendulum",
                control: c.label(),
                test: tname,
                solver,
                linear,
                scenario: pend(c, t),
            });
        }
    }
    v
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Outcome {
    let all = bench_cases();
    let keys: Vec<&str> = all.iter().map(|c| c.key).collect();
    let chosen: Vec<&BenchCase> = match &a.subset {
        Some(list) => {
            let mut out = vec![];
            for name in list {
                match all.iter().find(|c| c.key == name) {
                    Some(c) => out.push(c),
                    None => return Err(Failure::Runtime(format!("unknown scenario {name:?}; known: {}", keys.join(", ")))),
                }
            }
            out
        }
        None => all.iter().collect(),
    };
    let mut rows: Vec<(&BenchCase, usize, Timing)> = vec![];
    for case in chosen {
        let repeats = a.repeats.unwrap_or(if case.linear { 500 } else { 50 });
        let built = case.scenario.build().map_err(runtime)?;
        let t = benchmark(repeats, a.warmup, || built.run().map(|_| ())).map_err(runtime)?;
        rows.push((case, repeats, t));
    }

    println!("{:<9} {:<6} {:<7} {:<6} {:>12} {:>12} {:>12} {:>7}", "Plant", "Control", "Test", "Solver", "Median(s)", "Q1(s)", "Q3(s)", "Repeats");
    let mut csv = String::from("Plant,Control,Test,Solver,Median(s),Q1(s),Q3(s),Repeats\n");
    for (c, r, t) in &rows {
        println!("{:<9} {:<7} {:<7} {:<6} {:>12.6} {:>12.6} {:>12.6} {:>7}", c.plant, c.control, c.test, c.solver, t.median, t.q1, t.q3, r);
        csv.push_str(&format!("{},{},{},{},{:?},{:?},{:?},{}\n", c.plant, c.control, c.test, c.solver, t.median, t.q1, t.q3, r));
    }
    if cli.format.contains(&Format::Csv) {
        fs::create_dir_all(&cli.out).map_err(|e| Failure::Runtime(format!("{}: {e}", cli.out.display())))?;
        let p = cli.out.join("bench.csv");
        fs::write(&p, csv).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }

    if a.check {
        let median = |key: &str| rows.iter().find(|r| r.0.key == key).map(|r| r.2.median);
        let (Some(n), Some(s)) = (median("nmpc_track"), median("slmpc_track")) else {
            return Err(Failure::Check("--check needs nmpc_track and slmpc_track in the subset".into()));
        };
        let ratio = n / s;
        println!("NMPC/SLMPC median ratio = {ratio:.2}");
        if ratio < 5.0 {
            return Err(Failure::Check(format!("SLMPC only {ratio:.2}× faster than NMPC (need 5×)")));
        }
        println!("check passed");
    }
    Ok(())
}

fn cmd_run(cli: &Cli, a: &RunArgs) -> Outcome {
    let text = fs::read_to_string(&a.file).map_err(|e| Failure::Runtime(format!("{}: {e}", a.file.display())))?;
    let scenario = Scenario::from_json(&text).map_err(runtime)?;
    log::debug!("scenario {}", scenario.to_json().map_err(runtime)?);
    let (rec, secs) = timed_run(&scenario)?;
    println!("{}", scenario.label());
    println!("steps = {}", rec.len());
    println!("run time = {secs:.6} s");
    let last = rec.y.last().cloned().unwrap_or_default();
    println!("final y = {last:?}");
    write_artifacts(cli, &scenario, &rec, json!({ "final_y": last, "seconds": secs }), &PlotOptions::default())
}

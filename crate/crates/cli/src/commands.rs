use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use nlwalk::dynamics::{conserved_k, integrate, IntegratorConfig, TrajectoryLog};
use nlwalk::equilibrium::{detailed_balance_residual, fixed_point, k_of_s, solve_s_from_k};
use nlwalk::io;
use nlwalk::kernel::{
    alpha_log_weights, dyson_series, lemma3_bound, propagate, sample_paths, FrozenPath, Generator,
};
use nlwalk::lattice::total_variation;
use nlwalk::lyapunov::{monitor, monitor_series};
use nlwalk::model::check_con2;
use nlwalk::particles::{self, Ensemble};
use nlwalk::{Error, LatticeMeasure, Window};

use crate::config::{RunConfig, Verdict};
use crate::error::CliError;

pub const SCHEMA_VERSION: &str = "nlwalk-output/1";

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn file(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }

    fn envelope(&self, command: &str, result: Value) -> Value {
        json!({
            "schema": SCHEMA_VERSION,
            "command": command,
            "config": self.config,
            "result": result,
        })
    }

    fn write_json(&self, name: &str, command: &str, result: Value) -> Result<Value, CliError> {
        let doc = self.envelope(command, result);
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, &doc)?;
        writeln!(f)?;
        f.flush()?;
        Ok(doc)
    }
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let window = cfg.window()?;
    let state0 = cfg.initial_state()?;
    let sim = &cfg.simulate;
    if sim.verdict == Verdict::Converge {
        if !params.is_mean_reverting() {
            return Err(Error::NotMeanReverting { c_lambda: params.c_lambda, c_mu: params.c_mu }.into());
        }
        if params.c != 1.0 {
            return Err(Error::CNotOne { c: params.c }.into());
        }
        if !check_con2(&params.beta, window, sim.condition_constant) {
            return Err(CliError::Condition(format!(
                "beta violates the convergence condition on the window with C = {}",
                sim.condition_constant
            )));
        }
    }

    let log = integrate(&params, &state0, sim.t_end, &cfg.integrator)?;
    let mut f = ctx.file("trajectory.csv")?;
    io::write_trajectory_csv(&log, &mut f)?;
    f.flush()?;

    let report = monitor(&log, sim.w_slack);
    let last = log.last();
    let tv_final = last.diagnostics.tv_to_fixed_point;
    let s_star = log.fixed_point.as_ref().map(|fp| fp.s);
    let converged = match (tv_final, s_star) {
        (Some(tv), Some(s)) => report.passed() && tv < sim.tv_tolerance && (last.state.s() - s).abs() < 1e-4,
        _ => false,
    };
    let summary = json!({
        "K0": log.k0,
        "K_drift_max": log.k_drift(),
        "s_star": s_star,
        "tv_final": tv_final,
        "W_violations": report.violations,
        "W_max_rise": report.max_violation,
        "Q_max": report.q_max,
        "Q_bound": finite_or_null(report.q_bound),
        "mean_offset_max": report.mean_offset_max,
        "mean_offset_bound": finite_or_null(report.mean_offset_bound),
        "monitors_certified": report.certified,
        "final": {
            "t": last.state.t,
            "L": last.state.l,
            "M": last.state.m,
            "s": last.state.s(),
            "d": last.state.d(),
        },
        "steps": { "accepted": log.stats.accepted, "rejected": log.stats.rejected },
        "converged": converged,
    });
    ctx.write_json("summary.json", "simulate", summary)?;
    println!(
        "K0 = {}, K drift = {:e}, s* = {}, TV(T) = {}, W violations = {}",
        log.k0,
        log.k_drift(),
        s_star.map_or("none".into(), |s| s.to_string()),
        tv_final.map_or("n/a".into(), |t| format!("{t:e}")),
        report.violations
    );
    if sim.verdict == Verdict::Converge && !converged {
        return Err(CliError::Numerical(format!(
            "convergence verdict failed: TV(T) = {tv_final:?}, W violations = {}",
            report.violations
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct FixedPointOut {
    s: f64,
    d: f64,
    #[serde(rename = "L")]
    l: f64,
    #[serde(rename = "M")]
    m: f64,
    xi: f64,
    #[serde(rename = "K")]
    k: f64,
    detailed_balance_residual: f64,
}

pub fn fixed_point_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let s = match cfg.fixed_point.s {
        Some(s) => s,
        None => solve_s_from_k(&params, conserved_k(&cfg.initial_state()?)),
    };
    let fp = fixed_point(&params, s, cfg.window()?)?;
    let out = FixedPointOut {
        s: fp.s,
        d: fp.d,
        l: fp.l,
        m: fp.m,
        xi: fp.xi,
        k: fp.k(),
        detailed_balance_residual: detailed_balance_residual(&params, &fp)?,
    };
    let mut f = ctx.file("pi.csv")?;
    io::write_measure_csv(&fp.pi, &mut f)?;
    f.flush()?;
    let doc = ctx.write_json("fixed_point.json", "fixed-point", serde_json::to_value(&out)?)?;
    println!("{}", serde_json::to_string_pretty(&doc["result"])?);
    Ok(())
}

pub fn solve_s(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let k = match cfg.solve_s.k {
        Some(k) => k,
        None => conserved_k(&cfg.initial_state()?),
    };
    let s = solve_s_from_k(&params, k);
    let residual = k_of_s(&params, s) - k;
    ctx.write_json("solve_s.json", "solve-s", json!({ "K": k, "s_star": s, "residual": residual }))?;
    println!("s* = {s:?}");
    Ok(())
}

/// The trajectory from the configured initial condition, recorded on a grid
/// of spacing `h` plus `extra` times.
fn recorded_path(cfg: &RunConfig, t_end: f64, h: f64, extra: &[f64]) -> Result<TrajectoryLog, CliError> {
    let n = (t_end / h).floor() as usize;
    let mut times: Vec<f64> = (1..=n).map(|i| i as f64 * h).chain(extra.iter().copied()).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let integ = IntegratorConfig { t_samples: times, lyapunov: false, ..cfg.integrator.clone() };
    Ok(integrate(&cfg.params()?, &cfg.initial_state()?, t_end, &integ)?)
}

fn law_at(log: &TrajectoryLog, t: f64) -> Option<&LatticeMeasure> {
    log.samples.iter().find(|s| (s.state.t - t).abs() < 1e-12).map(|s| &s.state.p)
}

pub fn kernel_check(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let kc = &cfg.kernel_check;
    let params = cfg.params()?;
    let win = Window::symmetric(kc.window_m)?;
    let log = recorded_path(cfg, kc.t_end, 0.01, &[])?;
    let path = FrozenPath::from_log(&log)?;
    let steps = |a: f64, b: f64| ((b - a) * kc.substeps_per_unit).round().max(1.0) as usize;
    let (t0, t1) = (0.0, kc.t_end);
    let whole = propagate(&params, &path, t0, t1, win, steps(t0, t1))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ck: f64 = 0.0;
    let mut deficit = whole.row_sum_deficit();
    let mut splits = Vec::new();
    for _ in 0..kc.splits {
        let ts = rng.random_range(t0..t1);
        let a = propagate(&params, &path, t0, ts, win, steps(t0, ts))?;
        let b = propagate(&params, &path, ts, t1, win, steps(ts, t1))?;
        ck = ck.max(a.compose(&b).max_abs_diff(&whole));
        deficit = deficit.max(a.row_sum_deficit()).max(b.row_sum_deficit());
        splits.push(ts);
    }

    let (l, m) = path.eval(t0)?;
    let frozen = FrozenPath::constant(l, m, t0, t0 + kc.series_dt)?;
    let exact = propagate(&params, &frozen, t0, t0 + kc.series_dt, win, steps(t0, t0 + kc.series_dt))?;
    let weights = alpha_log_weights(win, params.alpha);
    let mut series = Vec::new();
    for &k in &kc.series_orders {
        let d = dyson_series(&params, &frozen, t0, t0 + kc.series_dt, win, k)?;
        series.push(json!({
            "k_max": k,
            "difference": d.kernel.weighted_diff_norm(&exact, &weights),
            "remainder_bound": finite_or_null(d.remainder_bound),
        }));
    }
    let operator = match lemma3_bound(&params, win, l, m) {
        Ok(bound) => json!({
            "measured": Generator::from_state(&params, win, l, m)?.offdiag_norm(params.alpha),
            "bound": bound,
        }),
        Err(Error::CNotOne { .. }) => Value::Null,
        Err(e) => return Err(e.into()),
    };

    let mut f = ctx.file("kernel.csv")?;
    io::write_kernel_csv(&whole, &mut f)?;
    f.flush()?;
    let report = json!({
        "kernel": io::kernel_metadata(&whole),
        "split_points": splits,
        "ck_deviation": ck,
        "row_sum_deficit": deficit,
        "series": series,
        "operator_bound": operator,
    });
    ctx.write_json("kernel.json", "kernel-check", report)?;
    println!("CK deviation {ck:e}, row-sum deficit {deficit:e}");
    Ok(())
}

pub fn sample_paths_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sp = &cfg.sample_paths;
    let params = cfg.params()?;
    let t_end = *sp.sample_times.last().expect("validated nonempty");
    let log = recorded_path(cfg, t_end, sp.path_spacing, &sp.sample_times)?;
    let path = FrozenPath::from_log(&log)?;
    let p0 = cfg.initial_law()?;
    let ens = sample_paths(&params, &path, &p0, &sp.sample_times, sp.n_paths, cfg.seed)?;
    let mut f = ctx.file("paths.csv")?;
    io::write_paths_csv(&ens, &mut f)?;
    f.flush()?;
    let mut marginals = Vec::new();
    for (k, &t) in sp.sample_times.iter().enumerate() {
        let tv = law_at(&log, t).map(|p| total_variation(&ens.marginal(k).expect("paths stay in the window"), p));
        marginals.push(json!({ "t": t, "tv_to_forward_equation": tv }));
    }
    ctx.write_json("paths.json", "sample-paths", json!({ "n_paths": sp.n_paths, "marginals": marginals }))?;
    println!("{} paths written", sp.n_paths);
    Ok(())
}

pub fn particles_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let pc = &cfg.particles;
    let params = cfg.params()?;
    let ens = Ensemble::from_measure(&cfg.initial_law()?, pc.n, cfg.initial.l0, cfg.initial.m0, cfg.seed)?;
    let traj = particles::run(&params, ens, pc.t_end, pc.dt, &pc.sample_times)?;
    let mut f = ctx.file("particles.csv")?;
    io::write_particles_csv(&traj, &mut f)?;
    f.flush()?;

    let integ = IntegratorConfig { t_samples: vec![pc.t_end], lyapunov: false, ..cfg.integrator.clone() };
    let ode = integrate(&params, &cfg.initial_state()?, pc.t_end, &integ)?;
    let target = &ode.last().state;
    let last = traj.last();
    let tv = total_variation(&traj.marginal(traj.samples.len() - 1)?, &target.p);
    let result = json!({
        "N": pc.n,
        "t": last.t,
        "L_N": last.l,
        "M_N": last.m,
        "K_N_drift": last.k_n - traj.samples[0].k_n,
        "L_ode": target.l,
        "M_ode": target.m,
        "tv_to_ode": tv,
    });
    ctx.write_json("particles.json", "particles", result)?;
    println!("|L_N - L| = {:e}, TV = {tv:e}", (last.l - target.l).abs());
    Ok(())
}

pub fn diagnose(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let input: PathBuf = cfg.diagnose.input.clone().unwrap_or_else(|| ctx.out.join("trajectory.csv"));
    let series = read_series(&input)?;
    if series.is_empty() {
        return Err(CliError::Config(format!("{} has no samples", input.display())));
    }
    let report = monitor_series(series, &params, cfg.window()?, cfg.diagnose.slack);
    let mut f = ctx.file("lyapunov.csv")?;
    io::write_lyapunov_csv(&report.series, &mut f)?;
    f.flush()?;
    let passed = report.passed();
    let result = json!({
        "input": input,
        "W_violations": report.violations,
        "W_max_rise": report.max_violation,
        "certified": report.certified,
        "Q_max": report.q_max,
        "Q_bound": finite_or_null(report.q_bound),
        "mean_offset_max": report.mean_offset_max,
        "mean_offset_bound": finite_or_null(report.mean_offset_bound),
        "passed": passed,
    });
    ctx.write_json("diagnose.json", "diagnose", result)?;
    let status = match (passed, report.certified) {
        (true, _) => "PASS",
        (false, true) => "FAIL",
        (false, false) => "UNCERTIFIED",
    };
    println!(
        "verdict: {status} ({} W-violations, Q max {:.6} <= {:.6}, |mean - s| max {:.6} <= {:.6})",
        report.violations, report.q_max, report.q_bound, report.mean_offset_max, report.mean_offset_bound
    );
    if status == "FAIL" {
        return Err(CliError::Numerical("Lyapunov monitors failed".into()));
    }
    Ok(())
}

fn read_series(path: &Path) -> Result<Vec<nlwalk::lyapunov::LyapunovSample>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    io::read_trajectory_csv(std::io::BufReader::new(f))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

//! The coupled system for `(p, L, M)` on a finite window and its integration.
//!
//! ```text
//! dp_n/dt = lambda_{n-1} p_{n-1} - (lambda_n + mu_n) p_n + mu_{n+1} p_{n+1}
//! dL/dt   = -sum p_n lambda_n + C_lambda
//! dM/dt   =  sum p_n mu_n     - C_mu
//! ```
//!
//! Rates leaving the window are zero (the truncated chain), in the `p`
//! equations and in the `L`, `M` equations alike, so both the total mass and
//! `K = L + M + sum n p_n` are exact linear invariants of the finite system.

mod stepper;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{fixed_point, solve_s_from_k, FixedPoint};
use crate::lattice::{total_variation, LatticeMeasure, Window};
use crate::lyapunov;
use crate::model::ModelParams;
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

pub(crate) use stepper::System;

/// Samples with an edge mass above this trigger a warning.
pub const BOUNDARY_MASS_WARNING: f64 = 1e-8;

/// Most negative entry tolerated before clipping.
pub const NEGATIVE_TOLERANCE: f64 = -1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemState {
    pub p: LatticeMeasure,
    pub l: f64,
    pub m: f64,
    pub t: f64,
}

impl SystemState {
    pub fn new(p: LatticeMeasure, l: f64, m: f64, t: f64) -> Result<Self> {
        if !p.is_probability() {
            return Err(Error::InvalidMeasure("state needs a probability measure".into()));
        }
        if !(l.is_finite() && m.is_finite() && t.is_finite() && t >= 0.0) {
            return Err(Error::InvalidArgument(format!("L = {l}, M = {m}, t = {t}")));
        }
        Ok(Self { p, l, m, t })
    }

    /// The state `(pi_s, L_s, M_s)` of a fixed point at time `t`.
    pub fn at_fixed_point(fp: &FixedPoint, t: f64) -> Self {
        Self { p: fp.pi.clone(), l: fp.l, m: fp.m, t }
    }

    pub fn window(&self) -> Window {
        self.p.window()
    }

    pub fn s(&self) -> f64 {
        0.5 * (self.l + self.m)
    }

    pub fn d(&self) -> f64 {
        0.5 * (self.l - self.m)
    }
}

/// Time derivative of `(p, L, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rhs {
    pub dp: Vec<f64>,
    pub dl: f64,
    pub dm: f64,
}

impl Rhs {
    /// `sum |dp_n| + |dL| + |dM|`.
    pub fn l1_norm(&self) -> f64 {
        self.dp.iter().map(|v| v.abs()).sum::<f64>() + self.dl.abs() + self.dm.abs()
    }
}

pub fn rhs(params: &ModelParams, state: &SystemState) -> Result<Rhs> {
    let sys = System::new(params, state.window())?;
    let size = state.window().size();
    let mut y = state.p.values().to_vec();
    y.extend([state.l, state.m]);
    let mut out = vec![0.0; size + 2];
    sys.eval(&y, &mut out)?;
    let dm = out.pop().expect("dim >= 2");
    let dl = out.pop().expect("dim >= 2");
    Ok(Rhs { dp: out, dl, dm })
}

/// Time derivative of `(p, s, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsSd {
    pub dp: Vec<f64>,
    pub ds: f64,
    pub dd: f64,
}

/// The right-hand side in `(s, d)` form: with `lambda~`, `mu~` the rates at
/// `L = M = s`, every rate carries the common factor `e^{cd}`, and
/// `ds = e^{cd}/2 sum p (mu~ - lambda~)`, `dd = -e^{cd}/2 sum p (lambda~ + mu~) + C_lambda`.
pub fn rhs_sd(params: &ModelParams, state: &SystemState) -> Result<RhsSd> {
    if !params.is_mean_reverting() {
        return Err(Error::NotMeanReverting { c_lambda: params.c_lambda, c_mu: params.c_mu });
    }
    let (s, d) = (state.s(), state.d());
    let sys = System::new(params, state.window())?;
    let r = sys.rates(s, s)?;
    let scale = (params.c * d).exp();
    let p = state.p.values();
    let size = p.len();
    let mut dp = vec![0.0; size];
    let mut diff = CompensatedSum::new();
    let mut total = CompensatedSum::new();
    for i in 0..size {
        let mut v = -(r.lambda[i] + r.mu[i]) * p[i];
        if i > 0 {
            v += r.lambda[i - 1] * p[i - 1];
        }
        if i + 1 < size {
            v += r.mu[i + 1] * p[i + 1];
        }
        dp[i] = scale * v;
        diff.add(p[i] * (r.mu[i] - r.lambda[i]));
        total.add(p[i] * (r.lambda[i] + r.mu[i]));
    }
    Ok(RhsSd {
        dp,
        ds: 0.5 * scale * diff.value(),
        dd: -0.5 * scale * total.value() + params.c_lambda,
    })
}

/// `K = L + M + sum n p_n`.
pub fn conserved_k(state: &SystemState) -> f64 {
    k_of_raw(state.window(), state.p.values(), state.l, state.m)
}

fn k_of_raw(window: Window, p: &[f64], l: f64, m: f64) -> f64 {
    let first: CompensatedSum = window.sites().zip(p).map(|(n, v)| n as f64 * v).collect();
    l + m + first.value()
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Method {
    /// Linearly implicit Euler extrapolated over `stages` step numbers
    /// (order `stages`). Adaptive mode controls the step from the
    /// difference of the two highest-order tableau entries.
    Extrapolated { stages: usize, adaptive: bool },
    /// Fixed-step classical Runge-Kutta; requires `dt * max exit rate < 0.5`.
    Rk4,
    /// Fixed-step uniformization of the `p`-block with frozen `(L, M)`.
    ExponentialSubstep,
}

impl Default for Method {
    fn default() -> Self {
        Method::Extrapolated { stages: 6, adaptive: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Initial step (adaptive) or the step (fixed-step methods).
    pub dt_init: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Output times in `(0, T]`; empty means 101 evenly spaced samples.
    pub t_samples: Vec<f64>,
    /// Record `H` and `W` at every sample.
    pub lyapunov: bool,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::default(),
            dt_init: 1e-3,
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            t_samples: Vec::new(),
            lyapunov: true,
            max_steps: 5_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_init > 0.0 && self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("dt_init and tolerances must be positive".into()));
        }
        if let Method::Extrapolated { stages, adaptive } = self.method {
            let lo = if adaptive { 2 } else { 1 };
            if !(lo..=12).contains(&stages) {
                return Err(Error::InvalidArgument(format!("stages = {stages} not in {lo}..=12")));
            }
        }
        if self.t_samples.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("sample times must be strictly increasing".into()));
        }
        Ok(())
    }

    fn sample_times(&self, t_end: f64) -> Vec<f64> {
        if t_end == 0.0 {
            return Vec::new();
        }
        if self.t_samples.is_empty() {
            return (1..=100).map(|i| t_end * i as f64 / 100.0).collect();
        }
        let mut ts: Vec<f64> = self.t_samples.iter().copied().filter(|t| *t > 0.0 && *t < t_end).collect();
        ts.push(t_end);
        ts
    }
}

/// Per-sample diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `K` from the unclipped `p`.
    pub k: f64,
    pub mass: f64,
    pub boundary_mass: f64,
    pub min_p: f64,
    pub q: f64,
    pub h: Option<f64>,
    pub w: Option<f64>,
    pub tv_to_fixed_point: Option<f64>,
    /// `L <= L0 + C_lambda t` and `M >= M0 - C_mu t`.
    pub monitors_hold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub state: SystemState,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryLog {
    pub params: ModelParams,
    pub k0: f64,
    /// Fixed point on the level set of `K(0)` (absent without mean reversion
    /// or when the window cannot hold it).
    pub fixed_point: Option<FixedPoint>,
    pub samples: Vec<Sample>,
    pub stats: StepStats,
}

impl TrajectoryLog {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.state.t).collect()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("a log holds at least the initial sample")
    }

    /// `max |K(t) - K(0)|` over the samples.
    pub fn k_drift(&self) -> f64 {
        self.samples.iter().map(|s| (s.diagnostics.k - self.k0).abs()).fold(0.0, f64::max)
    }
}

struct Recorder<'a> {
    params: &'a ModelParams,
    l0: f64,
    m0: f64,
    k0: f64,
    lyapunov: bool,
    fixed_point: Option<FixedPoint>,
    warned_boundary: bool,
}

impl Recorder<'_> {
    /// Builds the sample at time `t` from the raw vector and replaces the
    /// `p`-block of `y` by its clipped, renormalized version.
    fn record(&mut self, window: Window, y: &mut DVector<f64>, t: f64) -> Result<Sample> {
        let size = window.size();
        let (l, m) = (y[size], y[size + 1]);
        let raw = &y.as_slice()[..size];
        let k = k_of_raw(window, raw, l, m);
        let min_p = raw.iter().copied().fold(f64::INFINITY, f64::min);
        if min_p < NEGATIVE_TOLERANCE {
            return Err(Error::NegativeProbability { t, min: min_p });
        }
        let raw_measure = LatticeMeasure::signed(window, raw.to_vec())?;
        let mass = raw_measure.mass();
        if (mass - 1.0).abs() > 1e-9 {
            warn!("mass {mass} at t = {t} deviates from 1 by more than 1e-9");
        }
        let boundary_mass = raw_measure.boundary_mass();
        if boundary_mass > BOUNDARY_MASS_WARNING && !self.warned_boundary {
            warn!("boundary mass {boundary_mass:e} at t = {t}: widen the window");
            self.warned_boundary = true;
        }
        let p = LatticeMeasure::clipped_probability(window, raw.to_vec())?;
        y.as_mut_slice()[..size].copy_from_slice(p.values());
        let state = SystemState { p, l, m, t };

        let q = lyapunov::q_value(self.params, &state)?;
        let (h, w) = if self.lyapunov {
            let h = lyapunov::entropy_h(&state.p, state.s(), self.params.c);
            (Some(h), Some(lyapunov::w_from_h(h, self.k0, state.s(), self.params.c)))
        } else {
            (None, None)
        };
        let tv_to_fixed_point = self.fixed_point.as_ref().map(|fp| total_variation(&state.p, &fp.pi));
        let slack = 1e-9 * (1.0 + t);
        let monitors_hold = l <= self.l0 + self.params.c_lambda * t + slack
            && m >= self.m0 - self.params.c_mu * t - slack;
        if !monitors_hold {
            warn!("no-explosion monitor violated at t = {t}: L = {l}, M = {m}");
        }
        Ok(Sample {
            state,
            diagnostics: Diagnostics {
                k,
                mass,
                boundary_mass,
                min_p,
                q,
                h,
                w,
                tv_to_fixed_point,
                monitors_hold,
            },
        })
    }
}

/// Integrates from `state0` up to time `state0.t + t_end`.
pub fn integrate(
    params: &ModelParams,
    state0: &SystemState,
    t_end: f64,
    config: &IntegratorConfig,
) -> Result<TrajectoryLog> {
    params.validate()?;
    config.validate()?;
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("T = {t_end}")));
    }
    let window = state0.window();
    let sys = System::new(params, window)?;
    let size = window.size();
    let t0 = state0.t;
    let k0 = conserved_k(state0);

    let fixed_point = if params.is_mean_reverting() {
        let s_star = solve_s_from_k(params, k0);
        match fixed_point(params, s_star, window) {
            Ok(fp) => Some(fp),
            Err(e) => {
                warn!("fixed point on the K level set unavailable: {e}");
                None
            }
        }
    } else {
        warn!(
            "C_lambda = {} != C_mu = {}: there are no fixed points",
            params.c_lambda, params.c_mu
        );
        None
    };

    let mut rec = Recorder {
        params,
        l0: state0.l,
        m0: state0.m,
        k0,
        lyapunov: config.lyapunov,
        fixed_point,
        warned_boundary: false,
    };

    let mut y = DVector::zeros(size + 2);
    y.as_mut_slice()[..size].copy_from_slice(state0.p.values());
    y[size] = state0.l;
    y[size + 1] = state0.m;

    if let Method::Rk4 = config.method {
        let r = sys.rates(state0.l, state0.m)?;
        let product = config.dt_init * r.max_exit();
        if product >= 0.5 {
            return Err(Error::UnstableStep { product });
        }
    }

    let mut samples = vec![rec.record(window, &mut y, t0)?];
    let mut stats = StepStats::default();
    let mut h = config.dt_init;
    let mut err_old: f64 = 1.0;
    let mut t = 0.0;

    let explosion = |e: Error, t: f64, y: &DVector<f64>| match e {
        Error::RateOverflow { .. } => Error::Explosion {
            t: t0 + t,
            l: y[size],
            m: y[size + 1],
            l_bound: state0.l + params.c_lambda * t,
            m_bound: state0.m - params.c_mu * t,
            source: Box::new(e),
        },
        other => other,
    };

    for target in config.sample_times(t_end) {
        while t < target {
            if stats.accepted + stats.rejected >= config.max_steps {
                return Err(Error::StepSizeUnderflow { t: t0 + t, dt: h });
            }
            let remaining = target - t;
            let last = remaining <= h * (1.0 + 1e-12);
            let step = if last { remaining } else { h };
            let trial = match config.method {
                Method::Extrapolated { stages, adaptive } => {
                    match stepper::extrapolated_step(&sys, &y, step, stages, config.rel_tol, config.abs_tol) {
                        Ok(tr) => Ok(tr),
                        Err(Error::RateOverflow { .. }) | Err(Error::StepSizeUnderflow { .. }) if adaptive => {
                            Ok(stepper::Trial { y: y.clone(), err: Some(f64::INFINITY) })
                        }
                        Err(e) => Err(e),
                    }
                }
                Method::Rk4 => stepper::rk4_step(&sys, &y, step),
                Method::ExponentialSubstep => stepper::exponential_step(&sys, &y, step),
            }
            .map_err(|e| explosion(e, t, &y))?;

            let adaptive = matches!(config.method, Method::Extrapolated { adaptive: true, .. });
            if !adaptive {
                y = trial.y;
                t = if last { target } else { t + step };
                stats.accepted += 1;
                continue;
            }
            let stages = match config.method {
                Method::Extrapolated { stages, .. } => stages.max(2) as f64,
                _ => unreachable!(),
            };
            let err = trial.err.unwrap_or(0.0);
            if err <= 1.0 {
                y = trial.y;
                t = if last { target } else { t + step };
                stats.accepted += 1;
                let fac = if err == 0.0 {
                    5.0
                } else {
                    0.9 * err.powf(-0.7 / stages) * err_old.powf(0.4 / stages)
                };
                err_old = err.max(1e-4);
                // A short final step says nothing about the next one.
                if !last || step >= h {
                    h = step * fac.clamp(0.2, 5.0);
                }
            } else {
                stats.rejected += 1;
                let fac = if err.is_finite() { (0.9 * err.powf(-1.0 / stages)).max(0.2) } else { 0.2 };
                h = step * fac.min(0.9);
                if h < 1e-14 * (1.0 + (t0 + t).abs()) {
                    return Err(explosion(Error::StepSizeUnderflow { t: t0 + t, dt: h }, t, &y));
                }
            }
        }
        samples.push(rec.record(window, &mut y, t0 + target)?);
    }

    Ok(TrajectoryLog { params: params.clone(), k0, fixed_point: rec.fixed_point, samples, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::fixed_point;
    use crate::model::BetaProfile;
    use proptest::prelude::*;

    fn benchmark_state(m: u32) -> SystemState {
        let win = Window::symmetric(m).unwrap();
        SystemState::new(LatticeMeasure::delta(win, 0).unwrap(), 1.3, -0.4, 0.0).unwrap()
    }

    #[test]
    fn rhs_single_site() {
        let p = ModelParams::new(1.0, 0.7, 1.9, BetaProfile::constant(1.0), 0.0).unwrap();
        let st = SystemState::new(LatticeMeasure::delta(Window::symmetric(3).unwrap(), 0).unwrap(), 0.0, 0.0, 0.0)
            .unwrap();
        let r = rhs(&p, &st).unwrap();
        assert_eq!(r.dp[3], -2.0);
        assert_eq!(r.dp[2], 1.0);
        assert_eq!(r.dp[4], 1.0);
        assert!((r.dl - (-1.0 + 0.7)).abs() < 1e-15);
        assert!((r.dm - (1.0 - 1.9)).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_is_stationary_across_windows() {
        for (c, beta) in [
            (1.0, BetaProfile::constant(1.0)),
            (0.6, BetaProfile::Table { offset: -1, values: vec![2.0, 3.0, 4.0], left: 2.0, right: 4.0 }),
            (2.0, BetaProfile::constant(0.4)),
        ] {
            let p = ModelParams::new(c, 1.2, 1.2, beta, 0.0).unwrap();
            for m in [15u32, 20, 25] {
                for s in [0.0, 0.7, -1.2] {
                    let fp = fixed_point(&p, s, Window::symmetric(m).unwrap()).unwrap();
                    let r = rhs(&p, &SystemState::at_fixed_point(&fp, 0.0)).unwrap();
                    let tol = 1e-12f64.max(10.0 * (-c * (m as f64 - s.abs() - 1.0).powi(2)).exp());
                    assert!(r.l1_norm() < tol.max(1e-10), "c={c} m={m} s={s}: {}", r.l1_norm());
                }
            }
        }
    }

    #[test]
    fn rhs_sd_requires_mean_reversion() {
        let p = ModelParams::new(1.0, 1.0, 2.0, BetaProfile::constant(1.0), 0.0).unwrap();
        let e = rhs_sd(&p, &benchmark_state(5)).unwrap_err();
        assert!(e.to_string().contains("there are no fixed points"));
    }

    #[test]
    fn rhs_sd_vanishes_at_fixed_point() {
        let p = ModelParams::benchmark();
        let fp = fixed_point(&p, 0.4, Window::symmetric(25).unwrap()).unwrap();
        let r = rhs_sd(&p, &SystemState::at_fixed_point(&fp, 0.0)).unwrap();
        assert!(r.ds.abs() < 1e-12 && r.dd.abs() < 1e-12);
        // e^{d} Q = 2 C_lambda at the fixed point.
        let q = lyapunov::q_value(&p, &SystemState::at_fixed_point(&fp, 0.0)).unwrap();
        assert!(((fp.d).exp() * q - 2.0).abs() < 1e-12);
    }

    #[test]
    fn conserved_k_examples() {
        let win = Window::symmetric(5).unwrap();
        let st = SystemState::new(LatticeMeasure::delta(win, 0).unwrap(), 1.0, 1.0, 0.0).unwrap();
        assert_eq!(conserved_k(&st), 2.0);
        let st = SystemState::new(LatticeMeasure::delta(win, 3).unwrap(), 0.0, 0.0, 0.0).unwrap();
        assert_eq!(conserved_k(&st), 3.0);
    }

    fn arb_state() -> impl Strategy<Value = SystemState> {
        (prop::collection::vec(0.0f64..1.0, 13), -2.0f64..2.0, -2.0f64..2.0).prop_map(|(v, l, m)| {
            let total: f64 = v.iter().sum::<f64>() + 1e-3;
            let v: Vec<f64> = v.iter().map(|x| (x + 1e-3 / 13.0) / total).collect();
            let p = LatticeMeasure::clipped_probability(Window::symmetric(6).unwrap(), v).unwrap();
            SystemState::new(p, l, m, 0.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mass_and_k_are_invariant(st in arb_state(), c in 0.3f64..2.0, cl in 0.1f64..3.0) {
            let p = ModelParams::new(c, cl, cl, BetaProfile::Table {
                offset: -2, values: vec![0.5, 1.5, 1.0, 2.0], left: 0.8, right: 1.1 }, 0.0).unwrap();
            let r = rhs(&p, &st).unwrap();
            let scale: f64 = r.dp.iter().map(|v| v.abs()).sum::<f64>() + 1.0;
            prop_assert!(r.dp.iter().sum::<f64>().abs() < 1e-13 * scale);
            let dk: f64 = r.dl + r.dm + st.window().sites().zip(&r.dp).map(|(n, v)| n as f64 * v).sum::<f64>();
            prop_assert!(dk.abs() < 1e-12 * scale * 7.0);
        }

        #[test]
        fn sd_form_is_consistent(st in arb_state(), c in 0.3f64..2.0) {
            let p = ModelParams::new(c, 1.4, 1.4, BetaProfile::constant(0.8), 0.0).unwrap();
            let a = rhs(&p, &st).unwrap();
            let b = rhs_sd(&p, &st).unwrap();
            let scale = 1.0 + a.dl.abs() + a.dm.abs();
            prop_assert!((b.ds - 0.5 * (a.dl + a.dm)).abs() < 1e-12 * scale);
            prop_assert!((b.dd - 0.5 * (a.dl - a.dm)).abs() < 1e-12 * scale);
            for (x, y) in a.dp.iter().zip(&b.dp) {
                prop_assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
            }
            if c == 1.0 {
                let q = lyapunov::q_value(&p, &st).unwrap();
                prop_assert!((b.dd - (-0.5 * st.d().exp() * q + 1.4)).abs() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn dd_reduces_to_q_at_unit_c() {
        let p = ModelParams::benchmark();
        let st = benchmark_state(6);
        let b = rhs_sd(&p, &st).unwrap();
        let q = lyapunov::q_value(&p, &st).unwrap();
        assert!((b.dd - (-0.5 * st.d().exp() * q + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = ModelParams::new(0.8, 1.1, 1.1, BetaProfile::table(-1, vec![0.6, 1.4, 0.9]), 0.0).unwrap();
        let win = Window::symmetric(4).unwrap();
        let sys = System::new(&p, win).unwrap();
        let y: Vec<f64> = (0..win.size()).map(|i| 0.05 + 0.01 * i as f64).chain([0.3, -0.2]).collect();
        let mut f0 = vec![0.0; sys.dim()];
        let r = sys.eval(&y, &mut f0).unwrap();
        let jac = sys.jacobian(&y, &r);
        for j in 0..sys.dim() {
            let h = 1e-6;
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += h;
            ym[j] -= h;
            let mut fp = vec![0.0; sys.dim()];
            let mut fm = vec![0.0; sys.dim()];
            sys.eval(&yp, &mut fp).unwrap();
            sys.eval(&ym, &mut fm).unwrap();
            for i in 0..sys.dim() {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - jac[(i, j)]).abs() < 1e-7 * (1.0 + fd.abs()), "({i},{j}): {fd} vs {}", jac[(i, j)]);
            }
        }
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let st = benchmark_state(10);
        let log = integrate(&ModelParams::benchmark(), &st, 0.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(log.samples.len(), 1);
        assert_eq!(log.samples[0].state, st);
    }

    #[test]
    fn benchmark_conserves_k_and_converges() {
        let p = ModelParams::benchmark();
        let st = benchmark_state(25);
        let config = IntegratorConfig { t_samples: (1..=40).map(|i| i as f64 * 0.5).collect(), ..Default::default() };
        let log = integrate(&p, &st, 20.0, &config).unwrap();
        assert!((log.k0 - 0.9).abs() < 1e-15);
        assert!(log.k_drift() < 1e-7, "{}", log.k_drift());
        let last = log.last();
        assert!((last.state.l - 0.050038949121446186).abs() < 1e-8, "{}", last.state.l);
        assert!((last.state.m - 0.5501670677013898).abs() < 1e-8, "{}", last.state.m);
        let s_star = solve_s_from_k(&p, log.k0);
        assert!((last.state.s() - s_star).abs() < 1e-4);
        assert!(log.samples.iter().all(|s| s.diagnostics.monitors_hold));
        let times = log.times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!(log.samples.iter().all(|s| (s.diagnostics.mass - 1.0).abs() < 1e-9));
    }

    #[test]
    fn fixed_step_extrapolation_has_its_order() {
        let p = ModelParams::benchmark();
        let st = benchmark_state(12);
        let reference = {
            let cfg = IntegratorConfig { rel_tol: 1e-13, abs_tol: 1e-15, t_samples: vec![1.0], ..Default::default() };
            integrate(&p, &st, 1.0, &cfg).unwrap()
        };
        let err = |dt: f64| {
            let cfg = IntegratorConfig {
                method: Method::Extrapolated { stages: 3, adaptive: false },
                dt_init: dt,
                t_samples: vec![1.0],
                ..Default::default()
            };
            let log = integrate(&p, &st, 1.0, &cfg).unwrap();
            let a = &log.last().state;
            let b = &reference.last().state;
            let dp: f64 = a.p.values().iter().zip(b.p.values()).map(|(x, y)| (x - y).abs()).sum();
            dp + (a.l - b.l).abs() + (a.m - b.m).abs()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        let order = (e1 / e2).log2();
        assert!(order > 2.7, "observed order {order} ({e1:e}, {e2:e})");
    }

    #[test]
    fn rk4_guard_and_accuracy_on_narrow_window() {
        let p = ModelParams::benchmark();
        let st = benchmark_state(25);
        let cfg = IntegratorConfig { method: Method::Rk4, dt_init: 1e-3, ..Default::default() };
        assert!(matches!(integrate(&p, &st, 1.0, &cfg), Err(Error::UnstableStep { .. })));

        let st = benchmark_state(5);
        let cfg = IntegratorConfig { method: Method::Rk4, dt_init: 2e-4, t_samples: vec![1.0], ..Default::default() };
        let a = integrate(&p, &st, 1.0, &cfg).unwrap();
        let cfg = IntegratorConfig { t_samples: vec![1.0], ..Default::default() };
        let b = integrate(&p, &st, 1.0, &cfg).unwrap();
        assert!((a.last().state.l - b.last().state.l).abs() < 1e-9);
        assert!(a.k_drift() < 1e-12);
    }

    #[test]
    fn exponential_substep_conserves_k_and_is_first_order() {
        let p = ModelParams::benchmark();
        let st = benchmark_state(6);
        let cfg = IntegratorConfig { t_samples: vec![1.0], ..Default::default() };
        let reference = integrate(&p, &st, 1.0, &cfg).unwrap();
        let err = |dt: f64| {
            let cfg = IntegratorConfig {
                method: Method::ExponentialSubstep,
                dt_init: dt,
                t_samples: vec![1.0],
                ..Default::default()
            };
            let log = integrate(&p, &st, 1.0, &cfg).unwrap();
            assert!(log.k_drift() < 1e-12);
            (log.last().state.l - reference.last().state.l).abs()
        };
        let (e1, e2) = (err(0.01), err(0.005));
        assert!(e1 / e2 > 1.7, "{e1:e} {e2:e}");
    }

    #[test]
    fn explosion_reports_monitor_bounds() {
        // Huge c makes rates overflow at the window edge once L moves.
        let p = ModelParams::new(40.0, 1.0, 1.0, BetaProfile::constant(1.0), 0.0).unwrap();
        let st = benchmark_state(25);
        match integrate(&p, &st, 1.0, &IntegratorConfig::default()) {
            Err(Error::Explosion { l_bound, .. }) => assert!(l_bound >= 1.3),
            Err(Error::RateOverflow { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn different_d_same_limit() {
        let p = ModelParams::benchmark();
        let win = Window::symmetric(20).unwrap();
        let p0 = LatticeMeasure::delta(win, 1).unwrap();
        let a = SystemState::new(p0.clone(), 0.5 + 0.8, 0.5 - 0.8, 0.0).unwrap();
        let b = SystemState::new(p0, 0.5 - 0.3, 0.5 + 0.3, 0.0).unwrap();
        let cfg = IntegratorConfig { t_samples: vec![40.0], lyapunov: false, ..Default::default() };
        let la = integrate(&p, &a, 40.0, &cfg).unwrap();
        let lb = integrate(&p, &b, 40.0, &cfg).unwrap();
        let (x, y) = (&la.last().state, &lb.last().state);
        assert!((x.s() - y.s()).abs() < 1e-8);
        assert!(total_variation(&x.p, &y.p) < 1e-8);
    }
}

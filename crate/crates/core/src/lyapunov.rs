//! Lyapunov functionals along trajectories.
//!
//! `Q = sum p_n (beta(n) e^{c(s-n)} + beta(n-1) e^{c(n-s)})`,
//! `H = sum p_n (ln p_n + c(s-n)^2)` (entropy relative to the unnormalized
//! Gaussian), and `W = H + c(2Ks - 3s^2)`, which is non-increasing at `c = 1`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{SystemState, System, TrajectoryLog};
use crate::lattice::{LatticeMeasure, Window};
use crate::model::{eval_beta, BetaProfile, ModelParams};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// Entries below this count as zero in `p ln p`.
pub const LOG_FLOOR: f64 = 1e-300;

/// `Q` with the truncated window rates evaluated at `L = M = s`.
pub fn q_value(params: &ModelParams, state: &SystemState) -> Result<f64> {
    let sys = System::new(params, state.window())?;
    let s = state.s();
    let r = sys.rates(s, s)?;
    let acc: CompensatedSum = state
        .p
        .values()
        .iter()
        .zip(r.lambda.iter().zip(&r.mu))
        .map(|(p, (a, b))| p * (a + b))
        .collect();
    Ok(acc.value())
}

pub fn entropy_h(p: &LatticeMeasure, s: f64, c: f64) -> f64 {
    let acc: CompensatedSum = p
        .iter()
        .filter(|(_, v)| *v >= LOG_FLOOR)
        .map(|(n, v)| {
            let x = s - n as f64;
            v * (v.ln() + c * x * x)
        })
        .collect();
    acc.value()
}

pub fn w_from_h(h: f64, k: f64, s: f64, c: f64) -> f64 {
    h + c * (2.0 * k * s - 3.0 * s * s)
}

/// `W` of `state` on the level set `K`. In certified mode `c` must be 1.
pub fn w_value(params: &ModelParams, state: &SystemState, k: f64, certified: bool) -> Result<f64> {
    if certified && params.c != 1.0 {
        return Err(Error::CNotOne { c: params.c });
    }
    let s = state.s();
    Ok(w_from_h(entropy_h(&state.p, s, params.c), k, s, params.c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    pub t: f64,
    pub q: f64,
    pub h: f64,
    pub w: f64,
    pub k: f64,
    pub s: f64,
    pub l: f64,
    pub m: f64,
    /// `sum n p_n`.
    pub mean: f64,
}

/// Verdict of [`monitor`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    pub slack: f64,
    /// Sample pairs with `W(t_{k+1}) > W(t_k) + slack`.
    pub violations: usize,
    /// Largest increase `W(t_{k+1}) - W(t_k)` (zero if `W` never increases).
    pub max_violation: f64,
    /// Whether monotonicity is a proven claim for these parameters (`c = 1`).
    pub certified: bool,
    pub q_max: f64,
    /// `max(Q(0), sup_n S_n)`; infinite when the bound is not available.
    pub q_bound: f64,
    pub mean_offset_max: f64,
    /// `q_bound / (e c inf beta)`.
    pub mean_offset_bound: f64,
    pub l_range: (f64, f64),
    pub m_range: (f64, f64),
    pub series: Vec<LyapunovSample>,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.q_max <= self.q_bound && self.mean_offset_max <= self.mean_offset_bound
    }
}

/// The constant bounding `Q` along trajectories:
/// `sup_n beta(n)/(4(beta(n) - beta(n+1)/e)) + beta(n-1)/(4(beta(n-1) - beta(n-2)/e))
///  + e(beta(n)^2 + beta(n-1)^2) - 2 beta(n) beta(n-1)` over the window.
pub fn q_bound_constant(beta: &BetaProfile, window: Window) -> f64 {
    let e = std::f64::consts::E;
    let mut sup = f64::NEG_INFINITY;
    for n in window.sites() {
        let (Ok(b0), Ok(b1), Ok(bm1), Ok(bm2)) =
            (eval_beta(beta, n), eval_beta(beta, n + 1), eval_beta(beta, n - 1), eval_beta(beta, n - 2))
        else {
            return f64::INFINITY;
        };
        let g0 = b0 - b1 / e;
        let g1 = bm1 - bm2 / e;
        if g0 <= 0.0 || g1 <= 0.0 {
            return f64::INFINITY;
        }
        let v = b0 / (4.0 * g0) + bm1 / (4.0 * g1) + e * (b0 * b0 + bm1 * bm1) - 2.0 * b0 * bm1;
        sup = sup.max(v);
    }
    sup
}

/// Series of a recorded trajectory; `W` is taken against `K(0)`.
pub fn series_from_log(log: &TrajectoryLog) -> Vec<LyapunovSample> {
    let c = log.params.c;
    log.samples
        .iter()
        .map(|smp| {
            let st = &smp.state;
            let s = st.s();
            let h = smp.diagnostics.h.unwrap_or_else(|| entropy_h(&st.p, s, c));
            LyapunovSample {
                t: st.t,
                q: smp.diagnostics.q,
                h,
                w: smp.diagnostics.w.unwrap_or_else(|| w_from_h(h, log.k0, s, c)),
                k: smp.diagnostics.k,
                s,
                l: st.l,
                m: st.m,
                mean: smp.diagnostics.k - 2.0 * s,
            }
        })
        .collect()
}

pub fn monitor(log: &TrajectoryLog, slack: f64) -> MonitorReport {
    let window = log.samples[0].state.window();
    monitor_series(series_from_log(log), &log.params, window, slack)
}

/// Monotonicity and boundedness checks on a bare series (e.g. read back from CSV).
pub fn monitor_series(series: Vec<LyapunovSample>, params: &ModelParams, window: Window, slack: f64) -> MonitorReport {
    assert!(slack >= 0.0, "slack must be nonnegative");
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    for w in series.windows(2) {
        let inc = w[1].w - w[0].w;
        max_violation = max_violation.max(inc);
        if inc > slack {
            violations += 1;
        }
    }
    let q0 = series.first().map_or(0.0, |s| s.q);
    let q_bound = q0.max(q_bound_constant(&params.beta, window));
    let inf_beta = window
        .sites()
        .filter_map(|n| eval_beta(&params.beta, n).ok())
        .fold(f64::INFINITY, f64::min);
    let mean_offset_bound = q_bound / (std::f64::consts::E * params.c * inf_beta);
    let fold = |f: fn(&LyapunovSample) -> f64| {
        series.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let q_max = series.iter().map(|s| s.q).fold(0.0, f64::max);
    let mean_offset_max = series.iter().map(|s| (s.mean - s.s).abs()).fold(0.0, f64::max);
    let l_range = fold(|s| s.l);
    let m_range = fold(|s| s.m);
    MonitorReport {
        slack,
        violations,
        max_violation,
        certified: params.c == 1.0,
        q_max,
        q_bound,
        mean_offset_max,
        mean_offset_bound,
        l_range,
        m_range,
        series,
    }
}

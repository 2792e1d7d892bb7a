//! Fixed points of the mean-field system and the map between the value of the
//! conserved quantity `K` and the fixed point on its level set.
//!
//! Every fixed point is a discrete Gaussian `pi_s(n) = exp(-c(n-s)^2) / Xi`
//! with `L_s = s + d`, `M_s = s - d`; `d` is fixed by the balance of the
//! `L` equation.

use serde::Serialize;

use crate::lattice::{LatticeMeasure, Window};
use crate::model::{eval_beta, BetaProfile, ModelParams};
use crate::numeric::CompensatedSum;
use crate::{Error, Result};

/// Relative stopping threshold for the Gaussian sums.
pub const DEFAULT_EPS: f64 = 1e-18;

/// Largest off-window mass accepted by [`discrete_gaussian`].
pub const MAX_OFF_WINDOW_MASS: f64 = 1e-12;

/// Sums `term(n)` over all integers, outward from `center` in both directions.
///
/// Each direction stops once it is at least two sites past `center` and
/// `bound(n) < eps * |sum|`, where `bound` dominates `|term|` from `n` on.
fn outward_sum(center: i64, eps: f64, term: impl Fn(i64) -> f64, bound: impl Fn(i64) -> f64) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.add(term(center));
    for dir in [1i64, -1] {
        let mut n = center + dir;
        loop {
            let t = term(n);
            acc.add(t);
            if (n - center).abs() >= 2 && bound(n) < eps * acc.value().abs() {
                break;
            }
            if (n - center).abs() > 1_000_000 {
                break;
            }
            n += dir;
        }
    }
    acc.value()
}

fn gaussian(c: f64, s: f64, n: i64) -> f64 {
    let x = n as f64 - s;
    (-c * x * x).exp()
}

/// `Xi(c, s) = sum_n exp(-c(n-s)^2)`.
pub fn partition_xi(c: f64, s: f64, eps: f64) -> f64 {
    assert!(c > 0.0 && eps > 0.0, "c and eps must be positive");
    let center = s.round() as i64;
    outward_sum(center, eps, |n| gaussian(c, s, n), |n| gaussian(c, s, n))
}

/// Normalized discrete Gaussian restricted to `window`.
pub fn discrete_gaussian(c: f64, s: f64, window: Window) -> Result<LatticeMeasure> {
    if !(c > 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("c = {c}, s = {s}")));
    }
    let xi = partition_xi(c, s, DEFAULT_EPS);
    let inside: Vec<f64> = window.sites().map(|n| gaussian(c, s, n)).collect();
    let inside_sum: f64 = inside.iter().copied().collect::<CompensatedSum>().value();
    let off = ((xi - inside_sum) / xi).max(0.0);
    if off > MAX_OFF_WINDOW_MASS || inside_sum == 0.0 {
        return Err(Error::WindowTooNarrow { off_window_mass: off });
    }
    LatticeMeasure::probability(window, inside.into_iter().map(|v| v / inside_sum).collect())
}

/// One member of the family of fixed points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub s: f64,
    pub d: f64,
    pub l: f64,
    pub m: f64,
    pub pi: LatticeMeasure,
    pub xi: f64,
}

impl FixedPoint {
    /// `K = L + M + sum n pi(n)` of the fixed point.
    pub fn k(&self) -> f64 {
        let mean: CompensatedSum = self.pi.iter().map(|(n, v)| (n as f64 - self.s) * v).collect();
        self.l + self.m + self.s + mean.value()
    }
}

/// `sum_k beta(k) exp(-c(k-s)^2) exp(c(s-k))`.
fn tilted_beta_sum(c: f64, beta: &BetaProfile, s: f64) -> Result<f64> {
    // Validate the profile up front so the closures below cannot fail.
    beta.validate()?;
    let sup = beta.sup();
    let tilt = |n: i64| {
        let x = n as f64 - s;
        (-c * x * x - c * x).exp()
    };
    let term = |n: i64| eval_beta(beta, n).unwrap_or(f64::NAN) * tilt(n);
    // The tilted Gaussian peaks at n - s = -1/2.
    let center = (s - 0.5).round() as i64;
    let bound = |n: i64| {
        if sup.is_finite() {
            sup * tilt(n)
        } else {
            // Undamped gauge: beta grows linearly, the Gaussian still dominates.
            term(n) * (1.0 + (n - center).unsigned_abs() as f64)
        }
    };
    Ok(outward_sum(center, DEFAULT_EPS, term, bound))
}

/// The fixed point with parameter `s`, with `pi_s` restricted to `window`.
pub fn fixed_point(params: &ModelParams, s: f64, window: Window) -> Result<FixedPoint> {
    if !params.is_mean_reverting() {
        return Err(Error::NoFixedPoint { c_lambda: params.c_lambda, c_mu: params.c_mu });
    }
    let c = params.c;
    let xi = partition_xi(c, s, DEFAULT_EPS);
    let denom = tilted_beta_sum(c, &params.beta, s)?;
    let d = (params.c_lambda * xi / denom).ln() / c;
    let pi = discrete_gaussian(c, s, window)?;
    Ok(FixedPoint { s, d, l: s + d, m: s - d, pi, xi })
}

/// `mean(pi_s) - s`, summed on the whole lattice.
fn mean_offset(c: f64, s: f64) -> f64 {
    let center = s.round() as i64;
    let xi = partition_xi(c, s, DEFAULT_EPS);
    let first = outward_sum(
        center,
        DEFAULT_EPS,
        |n| (n as f64 - s) * gaussian(c, s, n),
        |n| (n as f64 - s).abs() * gaussian(c, s, n),
    );
    first / xi
}

fn variance(c: f64, s: f64) -> f64 {
    let center = s.round() as i64;
    let xi = partition_xi(c, s, DEFAULT_EPS);
    let mo = mean_offset(c, s);
    let second = outward_sum(
        center,
        DEFAULT_EPS,
        |n| {
            let x = n as f64 - s - mo;
            x * x * gaussian(c, s, n)
        },
        |n| {
            let x = n as f64 - s - mo;
            x * x * gaussian(c, s, n)
        },
    );
    second / xi
}

/// `F(s) = 2s + mean(pi_s)`: the value of `K` at the fixed point with parameter `s`.
///
/// Only `c` enters. `F(s + 1) = F(s) + 3` and `F'(s) = 2 + 2c Var(pi_s) >= 2`.
pub fn k_of_s(params: &ModelParams, s: f64) -> f64 {
    3.0 * s + mean_offset(params.c, s)
}

/// `F'(s)`.
pub fn k_of_s_derivative(params: &ModelParams, s: f64) -> f64 {
    2.0 + 2.0 * params.c * variance(params.c, s)
}

/// The unique `s*` with `F(s*) = K`.
///
/// `F(s) - 3s = mean(pi_s) - s` is 1-periodic with modulus below 1, so
/// `[K/3 - 1, K/3 + 1]` always brackets the root. `F` is odd, so the
/// solution is computed for `|K|` and `K = 0` maps to exactly `0`.
pub fn solve_s_from_k(params: &ModelParams, k: f64) -> f64 {
    assert!(k.is_finite(), "K must be finite");
    if k == 0.0 {
        return 0.0;
    }
    if k < 0.0 {
        return -solve_s_from_k(params, -k);
    }
    let f = |s: f64| k_of_s(params, s) - k;
    let (mut a, mut b) = (k / 3.0 - 1.0, k / 3.0 + 1.0);
    let (mut fa, mut fb) = (f(a), f(b));
    debug_assert!(fa < 0.0 && fb > 0.0);
    for _ in 0..40 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm < 0.0 {
            (a, fa) = (mid, fm);
        } else {
            (b, fb) = (mid, fm);
        }
    }
    // Secant refinement inside the bracket.
    let (mut x0, mut f0, mut x1, mut f1) = (a, fa, b, fb);
    for _ in 0..20 {
        if f1 == f0 {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        if !(x2 >= a && x2 <= b) {
            break;
        }
        let f2 = f(x2);
        (x0, f0, x1, f1) = (x1, f1, x2, f2);
        if f1.abs() < 1e-14 * k.abs().max(1.0) {
            break;
        }
    }
    if f1.abs() <= f0.abs() {
        x1
    } else {
        x0
    }
}

/// `max_n |pi(n) lambda_n - pi(n+1) mu_{n+1}| / (pi(n) lambda_n)` over
/// consecutive window sites, evaluated in log space at the fixed point's `(L, M)`.
pub fn detailed_balance_residual(params: &ModelParams, fp: &FixedPoint) -> Result<f64> {
    let c = params.c;
    let window = fp.pi.window();
    let log_pi = |n: i64| {
        let v = fp.pi.get(n);
        if v > 1e-300 {
            v.ln()
        } else {
            let x = n as f64 - fp.s;
            -c * x * x - fp.xi.ln()
        }
    };
    let mut worst: f64 = 0.0;
    for n in window.n_min()..window.n_max() {
        let a = log_pi(n) + params.log_lambda(fp.l, n)?;
        let b = log_pi(n + 1) + params.log_mu(fp.m, n + 1)?;
        worst = worst.max((a - b).exp_m1().abs());
    }
    Ok(worst)
}

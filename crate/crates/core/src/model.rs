//! Problem data: the `beta` profile, the rate constants, the jump rates and
//! the standing conditions on `beta` (boundedness, the convergence condition
//! and the weighted-space boundedness criterion for the off-diagonal part).

use serde::{Deserialize, Serialize};

use crate::lattice::Window;
use crate::numeric::MAX_EXPONENT;
use crate::{Error, Result};

/// Site-dependent rate multiplier `beta(n) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BetaProfile {
    Constant {
        value: f64,
    },
    /// `values[i]` is `beta(offset + i)`; `left`/`right` extend the table to
    /// the rest of the lattice.
    Table {
        offset: i64,
        values: Vec<f64>,
        left: f64,
        right: f64,
    },
    /// `beta(n) = slope * (1 + |n|) * exp(-decay * |n|)`.
    ///
    /// With `decay = c` the mean drift `lambda_n - mu_n` becomes asymptotically
    /// linear in `n`. `inf beta = 0` whenever `decay > 0`, so the convergence
    /// condition never holds for this kind: it is experimental.
    LinearDriftGauge {
        slope: f64,
        decay: f64,
    },
}

impl BetaProfile {
    pub fn constant(value: f64) -> Self {
        BetaProfile::Constant { value }
    }

    /// Table with both extensions equal to the nearest stored value.
    pub fn table(offset: i64, values: Vec<f64>) -> Self {
        let left = values.first().copied().unwrap_or(1.0);
        let right = values.last().copied().unwrap_or(1.0);
        BetaProfile::Table { offset, values, left, right }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidProfile(format!("{what} = {v} must be positive and finite")))
        };
        match self {
            BetaProfile::Constant { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return bad("constant", *value);
                }
            }
            BetaProfile::Table { values, left, right, .. } => {
                if values.is_empty() {
                    return Err(Error::InvalidProfile("empty table".into()));
                }
                for v in values.iter().chain([left, right]) {
                    if !(*v > 0.0 && v.is_finite()) {
                        return bad("table entry", *v);
                    }
                }
            }
            BetaProfile::LinearDriftGauge { slope, decay } => {
                if !(*slope > 0.0 && slope.is_finite()) {
                    return bad("slope", *slope);
                }
                if !(*decay >= 0.0 && decay.is_finite()) {
                    return Err(Error::InvalidProfile(format!("decay = {decay} must be >= 0")));
                }
            }
        }
        Ok(())
    }

    pub fn is_experimental(&self) -> bool {
        matches!(self, BetaProfile::LinearDriftGauge { .. })
    }

    /// Supremum over the whole lattice (infinite for an undamped gauge).
    pub fn sup(&self) -> f64 {
        match self {
            BetaProfile::Constant { value } => *value,
            BetaProfile::Table { values, left, right, .. } => {
                values.iter().copied().fold(left.max(*right), f64::max)
            }
            BetaProfile::LinearDriftGauge { slope, decay } => {
                if *decay == 0.0 {
                    return f64::INFINITY;
                }
                // (1 + x) e^{-decay x} peaks at x = 1/decay - 1.
                let x = (1.0 / decay - 1.0).max(0.0);
                [x.floor(), x.ceil()]
                    .iter()
                    .map(|k| slope * (1.0 + k) * (-decay * k).exp())
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// `beta(n)` for the given profile.
pub fn eval_beta(profile: &BetaProfile, n: i64) -> Result<f64> {
    let v = match profile {
        BetaProfile::Constant { value } => *value,
        BetaProfile::Table { offset, values, left, right } => {
            let i = n - offset;
            if i < 0 {
                *left
            } else if i as usize >= values.len() {
                *right
            } else {
                values[i as usize]
            }
        }
        BetaProfile::LinearDriftGauge { slope, decay } => {
            let a = n.unsigned_abs() as f64;
            slope * (1.0 + a) * (-decay * a).exp()
        }
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidProfile(format!("beta({n}) = {v}")))
    }
}

/// Static problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Inverse squared lattice unit.
    pub c: f64,
    pub c_lambda: f64,
    pub c_mu: f64,
    pub beta: BetaProfile,
    /// Exponent of the weighted norms.
    #[serde(default)]
    pub alpha: f64,
}

impl ModelParams {
    pub fn new(c: f64, c_lambda: f64, c_mu: f64, beta: BetaProfile, alpha: f64) -> Result<Self> {
        let p = Self { c, c_lambda, c_mu, beta, alpha };
        p.validate()?;
        Ok(p)
    }

    /// `beta = 1`, `c = C_lambda = C_mu = 1`, `alpha = 0`.
    pub fn benchmark() -> Self {
        Self::new(1.0, 1.0, 1.0, BetaProfile::constant(1.0), 0.0).expect("valid benchmark")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c", self.c), ("C_lambda", self.c_lambda), ("C_mu", self.c_mu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidParams("alpha must be finite".into()));
        }
        self.beta.validate()
    }

    pub fn is_mean_reverting(&self) -> bool {
        self.c_lambda == self.c_mu
    }

    pub fn beta(&self, n: i64) -> Result<f64> {
        eval_beta(&self.beta, n)
    }

    /// `ln lambda_n = ln beta(n) - c(n - L)`.
    pub fn log_lambda(&self, l: f64, n: i64) -> Result<f64> {
        Ok(self.beta(n)?.ln() - self.c * (n as f64 - l))
    }

    /// `ln mu_n = ln beta(n-1) + c(n - M)`.
    pub fn log_mu(&self, m: f64, n: i64) -> Result<f64> {
        Ok(self.beta(n - 1)?.ln() + self.c * (n as f64 - m))
    }
}

fn checked_exp(log_rate: f64, site: i64) -> Result<f64> {
    if log_rate > MAX_EXPONENT || log_rate.is_nan() {
        return Err(Error::RateOverflow { site, log_rate });
    }
    Ok(log_rate.exp())
}

/// `(lambda_n, mu_n)` at parameters `(L, M)`.
pub fn jump_rates(params: &ModelParams, l: f64, m: f64, n: i64) -> Result<(f64, f64)> {
    let lam = checked_exp(params.log_lambda(l, n)?, n)?;
    let mu = checked_exp(params.log_mu(m, n)?, n)?;
    Ok((lam, mu))
}

/// Jump rates of the truncated chain on a window: the up-rate at the right
/// edge and the down-rate at the left edge are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRates {
    pub window: Window,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl WindowRates {
    pub fn new(params: &ModelParams, window: Window, l: f64, m: f64) -> Result<Self> {
        let size = window.size();
        let mut lambda = Vec::with_capacity(size);
        let mut mu = Vec::with_capacity(size);
        for (i, n) in window.sites().enumerate() {
            let (a, b) = jump_rates(params, l, m, n)?;
            lambda.push(if i + 1 == size { 0.0 } else { a });
            mu.push(if i == 0 { 0.0 } else { b });
        }
        Ok(Self { window, lambda, mu })
    }

    /// Largest total exit rate `lambda_n + mu_n` on the window.
    pub fn max_exit_rate(&self) -> f64 {
        self.lambda
            .iter()
            .zip(&self.mu)
            .map(|(a, b)| a + b)
            .fold(0.0, f64::max)
    }
}

/// Outcome of the boundedness check on `beta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Con1Report {
    pub holds: bool,
    pub sup_beta: f64,
    /// Set for experimental profiles and profiles unbounded off the window.
    pub warning: Option<String>,
}

/// `sup beta` over the window and, for tables, the extension values.
pub fn check_con1(profile: &BetaProfile, window: Window) -> Con1Report {
    let mut sup = window
        .sites()
        .filter_map(|n| eval_beta(profile, n).ok())
        .fold(0.0, f64::max);
    if let BetaProfile::Table { left, right, .. } = profile {
        sup = sup.max(*left).max(*right);
    }
    let warning = match profile {
        BetaProfile::LinearDriftGauge { decay, .. } if *decay == 0.0 => Some(
            "linear-drift gauge grows without bound; supremum taken over the window only".to_string(),
        ),
        BetaProfile::LinearDriftGauge { .. } => {
            Some("linear-drift gauge is experimental: convergence is not certified".to_string())
        }
        _ => None,
    };
    Con1Report { holds: sup.is_finite(), sup_beta: sup, warning }
}

/// The convergence condition on `beta`, checked at every site of the window:
/// `inf beta > 0`, `beta(n+1)/e - beta(n) < -C` and `beta(n-1)/e - beta(n) < -C`.
pub fn check_con2(profile: &BetaProfile, window: Window, constant: f64) -> bool {
    assert!(constant > 0.0, "the constant C must be positive");
    let inv_e = (-1.0f64).exp();
    window.sites().all(|n| {
        let (Ok(b), Ok(up), Ok(down)) = (
            eval_beta(profile, n),
            eval_beta(profile, n + 1),
            eval_beta(profile, n - 1),
        ) else {
            return false;
        };
        b > 0.0 && inv_e * up - b < -constant && inv_e * down - b < -constant
    })
}

/// Weighted-space boundedness data for the off-diagonal part `V`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma2Report {
    /// `max_n lambda_n mu_{n+1}` over consecutive window sites.
    pub sup_lambda_mu: f64,
    /// `ln c_n` for each window site, normalized to `c = 1` at the site
    /// closest to 0, where `c_{n+1} / c_n = sqrt(mu_{n+1} / lambda_n)`.
    pub log_weights: Vec<f64>,
    /// `max_n sqrt(lambda_{n-1} mu_n) + sqrt(lambda_n mu_{n+1})` over the window.
    pub norm_estimate: f64,
}

impl Lemma2Report {
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }
}

/// Evaluates the criterion at frozen `(L, M)` with the untruncated rates.
pub fn lemma2_boundedness(params: &ModelParams, window: Window, l: f64, m: f64) -> Result<Lemma2Report> {
    let ll = |n: i64| params.log_lambda(l, n);
    let lm = |n: i64| params.log_mu(m, n);

    let mut sup_log = f64::NEG_INFINITY;
    for n in window.n_min()..window.n_max() {
        sup_log = sup_log.max(ll(n)? + lm(n + 1)?);
    }

    // Cumulative log-sums in both directions from the anchor.
    let anchor = 0i64.clamp(window.n_min(), window.n_max());
    let mut log_weights = vec![0.0; window.size()];
    let ai = window.index(anchor).expect("anchor inside window");
    for i in ai + 1..window.size() {
        let n = window.site(i - 1);
        log_weights[i] = log_weights[i - 1] + 0.5 * (lm(n + 1)? - ll(n)?);
    }
    for i in (0..ai).rev() {
        let n = window.site(i);
        log_weights[i] = log_weights[i + 1] - 0.5 * (lm(n + 1)? - ll(n)?);
    }

    let mut norm_estimate: f64 = 0.0;
    for n in window.sites() {
        let a = (0.5 * (ll(n - 1)? + lm(n)?)).exp();
        let b = (0.5 * (ll(n)? + lm(n + 1)?)).exp();
        norm_estimate = norm_estimate.max(a + b);
    }

    Ok(Lemma2Report { sup_lambda_mu: sup_log.exp(), log_weights, norm_estimate })
}

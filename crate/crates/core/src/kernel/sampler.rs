//! Monte Carlo paths of the chain driven by a frozen `(L, M)` path, by thinning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use super::FrozenPath;
use crate::lattice::{LatticeMeasure, Window};
use crate::model::ModelParams;
use crate::{Error, Result};

/// Dominating rates above this are rejected as infeasible.
pub const MAX_DOMINATING_RATE: f64 = 1e9;

/// Positions of `n_paths` independent walkers at each sample time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathEnsemble {
    pub window: Window,
    pub seed: u64,
    pub sample_times: Vec<f64>,
    /// `positions[path][k]` is the site of `path` at `sample_times[k]`.
    pub positions: Vec<Vec<i64>>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.positions.len()
    }

    /// Empirical law at `sample_times[k]`.
    pub fn marginal(&self, k: usize) -> Result<LatticeMeasure> {
        let mut counts = vec![0.0; self.window.size()];
        for path in &self.positions {
            counts[self.window.index(path[k]).expect("paths stay in the window")] += 1.0;
        }
        let n = self.n_paths() as f64;
        LatticeMeasure::probability(self.window, counts.into_iter().map(|c| c / n).collect())
    }

    /// Empirical frequency of `(xi(t_a) = n1, xi(t_b) = n2)`.
    pub fn joint_frequency(&self, a: usize, b: usize, n1: i64, n2: i64) -> f64 {
        let hits = self.positions.iter().filter(|p| p[a] == n1 && p[b] == n2).count();
        hits as f64 / self.n_paths() as f64
    }
}

/// Truncated `(lambda_x, mu_x)` at `(l, m)`.
fn site_rates(params: &ModelParams, window: Window, x: i64, l: f64, m: f64) -> Result<(f64, f64)> {
    let (lam, mu) = crate::model::jump_rates(params, l, m, x)?;
    Ok((if x == window.n_max() { 0.0 } else { lam }, if x == window.n_min() { 0.0 } else { mu }))
}

/// Simulates `n_paths` walkers started from `p0` at the path's start time.
///
/// Path `i` uses the ChaCha8 stream `i` of `seed`, so results do not depend
/// on scheduling.
pub fn sample_paths(
    params: &ModelParams,
    path: &FrozenPath,
    p0: &LatticeMeasure,
    sample_times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if !p0.is_probability() {
        return Err(Error::InvalidMeasure("initial law must be a probability".into()));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("sample times must be nondecreasing".into()));
    }
    let window = p0.window();
    let t_last = sample_times.last().copied().unwrap_or(path.start());
    for &t in sample_times {
        path.eval(t)?;
    }
    let segments = path.breakpoints(path.start(), t_last)?;

    let positions = (0..n_paths)
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx as u64);
            simulate(params, path, p0, window, sample_times, &segments, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble { window, seed, sample_times: sample_times.to_vec(), positions })
}

fn draw_initial(p0: &LatticeMeasure, u: f64) -> i64 {
    let mut acc = 0.0;
    let mut last = p0.window().n_min();
    for (n, v) in p0.iter() {
        if v > 0.0 {
            last = n;
            acc += v;
            if u < acc {
                return n;
            }
        }
    }
    last
}

fn simulate(
    params: &ModelParams,
    path: &FrozenPath,
    p0: &LatticeMeasure,
    window: Window,
    sample_times: &[f64],
    segments: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<i64>> {
    let mut x = draw_initial(p0, rng.random::<f64>());
    let mut out = Vec::with_capacity(sample_times.len());
    let mut t = path.start();

    for seg in segments.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let (la, ma) = path.eval(a)?;
        let (lb, mb) = path.eval(b)?;
        // Each rate is monotone in L or M, which is linear on the segment.
        let bound = |x: i64| -> Result<f64> {
            let (l0, m0) = site_rates(params, window, x, la, ma)?;
            let (l1, m1) = site_rates(params, window, x, lb, mb)?;
            let r = l0.max(l1) + m0.max(m1);
            if !r.is_finite() || r > MAX_DOMINATING_RATE {
                return Err(Error::DominatingRateOverflow { rate: r });
            }
            Ok(r)
        };
        let mut rate = bound(x)?;
        loop {
            let t_new = if rate > 0.0 {
                t + Exp::new(rate).expect("positive rate").sample(rng)
            } else {
                f64::INFINITY
            };
            let horizon = t_new.min(b);
            while out.len() < sample_times.len() && sample_times[out.len()] <= horizon {
                out.push(x);
            }
            if t_new > b {
                t = b;
                break;
            }
            t = t_new;
            let (l, m) = path.eval(t)?;
            let (lam, mu) = site_rates(params, window, x, l, m)?;
            debug_assert!(lam + mu <= rate * (1.0 + 1e-12));
            let u = rng.random::<f64>() * rate;
            if u < lam {
                x += 1;
                rate = bound(x)?;
            } else if u < lam + mu {
                x -= 1;
                rate = bound(x)?;
            }
        }
    }
    while out.len() < sample_times.len() {
        out.push(x);
    }
    Ok(out)
}

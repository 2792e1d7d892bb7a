//! Mean-field particle system: `N` walkers share `(L, M)`, which relax
//! against the empirical average rates instead of the exact law.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::lattice::{LatticeMeasure, Window};
use crate::model::{jump_rates, ModelParams};
use crate::{Error, Result};

/// Largest accepted `dt * max(lambda + mu)` over occupied sites.
pub const MAX_JUMP_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Ensemble {
    window: Window,
    positions: Vec<i64>,
    l: f64,
    m: f64,
    t: f64,
    seed: u64,
    /// One stream per particle.
    rngs: Vec<ChaCha8Rng>,
}

fn particle_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

impl Ensemble {
    pub fn new(window: Window, positions: Vec<i64>, l: f64, m: f64, seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("need at least one particle".into()));
        }
        if let Some(x) = positions.iter().find(|x| !window.contains(**x)) {
            return Err(Error::InvalidArgument(format!("particle at {x} outside the window")));
        }
        if !(l.is_finite() && m.is_finite()) {
            return Err(Error::InvalidArgument("L and M must be finite".into()));
        }
        let rngs = (0..positions.len()).map(|i| particle_rng(seed, i)).collect();
        Ok(Self { window, positions, l, m, t: 0.0, seed, rngs })
    }

    /// `n` particles drawn independently from `p0`, each with the first draw
    /// of its own stream.
    pub fn from_measure(p0: &LatticeMeasure, n: usize, l: f64, m: f64, seed: u64) -> Result<Self> {
        if !p0.is_probability() {
            return Err(Error::InvalidMeasure("initial law must be a probability".into()));
        }
        let window = p0.window();
        let mut ens = Self::new(window, vec![window.n_min(); n], l, m, seed)?;
        let cdf: Vec<f64> = p0
            .values()
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let last_positive = p0.values().iter().rposition(|v| *v > 0.0).expect("positive mass");
        for (x, rng) in ens.positions.iter_mut().zip(ens.rngs.iter_mut()) {
            let u: f64 = rng.random();
            let i = cdf.partition_point(|c| *c <= u).min(last_positive);
            *x = window.site(i);
        }
        Ok(ens)
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Particle counts per window site.
    pub fn histogram(&self) -> Vec<u64> {
        let mut h = vec![0u64; self.window.size()];
        for x in &self.positions {
            h[(x - self.window.n_min()) as usize] += 1;
        }
        h
    }

    pub fn empirical_measure(&self) -> Result<LatticeMeasure> {
        let n = self.len() as f64;
        LatticeMeasure::probability(self.window, self.histogram().iter().map(|c| *c as f64 / n).collect())
    }

    /// `K_N = L + M + mean position`.
    pub fn k_n(&self) -> f64 {
        let sum: i64 = self.positions.iter().sum();
        self.l + self.m + sum as f64 / self.len() as f64
    }
}

/// One step of length `dt`: every particle jumps up with probability
/// `lambda_x dt`, down with probability `mu_x dt`; then `L` and `M` take an
/// Euler step driven by the pre-jump empirical rates.
pub fn mc_step(params: &ModelParams, ens: &mut Ensemble, dt: f64) -> Result<()> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt = {dt}")));
    }
    if dt == 0.0 {
        return Ok(());
    }
    let counts = ens.histogram();
    let occupied = |i: &usize| counts[*i] > 0;
    let lo = (0..counts.len()).find(occupied).expect("nonempty ensemble");
    let hi = (0..counts.len()).rev().find(occupied).expect("nonempty ensemble");
    // Rates are only needed (and only overflow-checked) on the occupied range.
    let (n_lo, n_hi) = (ens.window.site(lo), ens.window.site(hi));
    let mut rates = Vec::with_capacity(hi - lo + 1);
    for x in n_lo..=n_hi {
        let (a, b) = jump_rates(params, ens.l, ens.m, x)?;
        let a = if x == ens.window.n_max() { 0.0 } else { a };
        let b = if x == ens.window.n_min() { 0.0 } else { b };
        rates.push((a, b));
    }
    let rate_of = |x: i64| -> (f64, f64) { rates[(x - n_lo) as usize] };
    let product = dt * (lo..=hi)
        .filter(|i| counts[*i] > 0)
        .map(|i| {
            let (a, b) = rate_of(ens.window.site(i));
            a + b
        })
        .fold(0.0, f64::max);
    if product >= MAX_JUMP_PROBABILITY {
        return Err(Error::StepTooLarge { product });
    }

    let n = ens.len() as f64;
    let (mut sl, mut sm) = (0.0, 0.0);
    for (i, &count) in counts.iter().enumerate().take(hi + 1).skip(lo) {
        if count > 0 {
            let (a, b) = rate_of(ens.window.site(i));
            sl += count as f64 * a;
            sm += count as f64 * b;
        }
    }

    ens.positions.par_iter_mut().zip(ens.rngs.par_iter_mut()).for_each(|(x, rng)| {
        let (a, b) = rate_of(*x);
        let u: f64 = rng.random();
        if u < a * dt {
            *x += 1;
        } else if u < (a + b) * dt {
            *x -= 1;
        }
    });

    ens.l += dt * (-sl / n + params.c_lambda);
    ens.m += dt * (sm / n - params.c_mu);
    ens.t += dt;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleSample {
    pub t: f64,
    pub l: f64,
    pub m: f64,
    pub k_n: f64,
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleTrajectory {
    pub window: Window,
    pub n: usize,
    pub seed: u64,
    pub dt: f64,
    pub samples: Vec<ParticleSample>,
}

impl ParticleTrajectory {
    pub fn last(&self) -> &ParticleSample {
        self.samples.last().expect("at least the initial sample")
    }

    /// Empirical law of sample `k`.
    pub fn marginal(&self, k: usize) -> Result<LatticeMeasure> {
        let total = self.n as f64;
        LatticeMeasure::probability(
            self.window,
            self.samples[k].histogram.iter().map(|c| *c as f64 / total).collect(),
        )
    }
}

fn snapshot(ens: &Ensemble) -> ParticleSample {
    ParticleSample { t: ens.t, l: ens.l, m: ens.m, k_n: ens.k_n(), histogram: ens.histogram() }
}

/// Runs `round(t_end / dt)` steps, recording the initial state and the steps
/// closest to each sample time (the final time is always recorded).
pub fn run(
    params: &ModelParams,
    mut ens: Ensemble,
    t_end: f64,
    dt: f64,
    sample_times: &[f64],
) -> Result<ParticleTrajectory> {
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!("dt = {dt}, T = {t_end}")));
    }
    let steps = (t_end / dt).round() as usize;
    let mut marks: Vec<usize> = sample_times
        .iter()
        .filter(|t| **t > 0.0 && **t <= t_end)
        .map(|t| (t / dt).round() as usize)
        .collect();
    marks.push(steps);
    marks.sort_unstable();
    marks.dedup();

    let mut samples = vec![snapshot(&ens)];
    let mut next = 0;
    for step in 1..=steps {
        mc_step(params, &mut ens, dt)?;
        ens.t = step as f64 * dt;
        while next < marks.len() && marks[next] == step {
            samples.push(snapshot(&ens));
            next += 1;
        }
    }
    Ok(ParticleTrajectory { window: ens.window, n: ens.len(), seed: ens.seed, dt, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BetaProfile;

    #[test]
    fn single_particle_jump_probabilities() {
        let p = ModelParams::benchmark();
        let win = Window::symmetric(5).unwrap();
        let dt = 1e-3;
        let trials = 200_000;
        let ens = Ensemble::new(win, vec![0; trials], 0.0, 0.0, 7).unwrap();
        let mut e = ens.clone();
        mc_step(&p, &mut e, dt).unwrap();
        let up = e.positions().iter().filter(|x| **x == 1).count() as f64 / trials as f64;
        let down = e.positions().iter().filter(|x| **x == -1).count() as f64 / trials as f64;
        let se = (dt / trials as f64).sqrt();
        assert!((up - dt).abs() < 5.0 * se, "{up}");
        assert!((down - dt).abs() < 5.0 * se, "{down}");
    }

    #[test]
    fn zero_step_is_identity() {
        let p = ModelParams::benchmark();
        let win = Window::symmetric(5).unwrap();
        let mut e = Ensemble::new(win, vec![0, 1, -2], 0.3, 0.1, 1).unwrap();
        let before = (e.positions().to_vec(), e.l(), e.m(), e.t());
        mc_step(&p, &mut e, 0.0).unwrap();
        assert_eq!(before, (e.positions().to_vec(), e.l(), e.m(), e.t()));
    }

    #[test]
    fn step_too_large() {
        let p = ModelParams::benchmark();
        let mut e = Ensemble::new(Window::symmetric(10).unwrap(), vec![8], 0.0, 0.0, 1).unwrap();
        assert!(matches!(mc_step(&p, &mut e, 1e-3), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn reproducible_and_confined() {
        let p = ModelParams::new(1.0, 1.0, 1.0, BetaProfile::constant(1.0), 0.0).unwrap();
        let win = Window::symmetric(3).unwrap();
        let p0 = LatticeMeasure::uniform(win);
        let a = run(&p, Ensemble::from_measure(&p0, 500, 0.2, -0.2, 5).unwrap(), 1.0, 1e-3, &[0.5]).unwrap();
        let b = run(&p, Ensemble::from_measure(&p0, 500, 0.2, -0.2, 5).unwrap(), 1.0, 1e-3, &[0.5]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 3);
        assert!(a.samples.iter().all(|s| s.histogram.iter().sum::<u64>() == 500));
        let c = run(&p, Ensemble::from_measure(&p0, 500, 0.2, -0.2, 6).unwrap(), 1.0, 1e-3, &[]).unwrap();
        assert_ne!(a.last().histogram, c.last().histogram);
    }

    #[test]
    fn initial_draw_follows_the_law() {
        let win = Window::symmetric(2).unwrap();
        let p0 = LatticeMeasure::probability(win, vec![0.0, 0.25, 0.0, 0.75, 0.0]).unwrap();
        let e = Ensemble::from_measure(&p0, 40_000, 0.0, 0.0, 3).unwrap();
        let h = e.histogram();
        assert_eq!(h[0] + h[2] + h[4], 0);
        let frac = h[1] as f64 / 40_000.0;
        assert!((frac - 0.25).abs() < 0.01);
    }
}

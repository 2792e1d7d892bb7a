//! Transition kernels of the linear chain driven by a prescribed `(L, M)` path.
//!
//! With `L` and `M` frozen as functions of time the walk is an ordinary
//! time-inhomogeneous birth-death chain on the window. Kernels are built by
//! uniformization over substeps with midpoint rates; the jump-path series
//! and a thinning sampler provide independent cross-checks.

mod dyson;
mod sampler;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{System, TrajectoryLog};
use crate::lattice::{LatticeMeasure, Window};
use crate::model::ModelParams;
use crate::numeric::MAX_EXPONENT;
use crate::{Error, Result};

pub use dyson::{dyson_series, DysonExpansion, MAX_SERIES_ORDER};
pub use sampler::{sample_paths, PathEnsemble};

/// `(L(t), M(t))` interpolated linearly between knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenPath {
    times: Vec<f64>,
    l: Vec<f64>,
    m: Vec<f64>,
}

impl FrozenPath {
    pub fn new(times: Vec<f64>, l: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != l.len() || times.len() != m.len() {
            return Err(Error::InvalidArgument("path needs equally long, nonempty columns".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("path times must be strictly increasing".into()));
        }
        if times.iter().chain(&l).chain(&m).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("path values must be finite".into()));
        }
        Ok(Self { times, l, m })
    }

    /// Constant `(l, m)` on `[t0, t1]`.
    pub fn constant(l: f64, m: f64, t0: f64, t1: f64) -> Result<Self> {
        if t1 > t0 {
            Self::new(vec![t0, t1], vec![l, l], vec![m, m])
        } else {
            Self::new(vec![t0], vec![l], vec![m])
        }
    }

    /// The `(L, M)` samples of an integrated trajectory.
    pub fn from_log(log: &TrajectoryLog) -> Result<Self> {
        let st = log.samples.iter().map(|s| &s.state);
        Self::new(
            st.clone().map(|s| s.t).collect(),
            st.clone().map(|s| s.l).collect(),
            st.map(|s| s.m).collect(),
        )
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    fn check(&self, t: f64) -> Result<()> {
        if t < self.start() || t > self.end() || t.is_nan() {
            return Err(Error::OutsidePath { t, start: self.start(), end: self.end() });
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        self.check(t)?;
        let j = self.times.partition_point(|x| *x <= t);
        if j == 0 {
            return Ok((self.l[0], self.m[0]));
        }
        if j >= self.times.len() {
            let k = self.times.len() - 1;
            return Ok((self.l[k], self.m[k]));
        }
        let (a, b) = (self.times[j - 1], self.times[j]);
        let u = (t - a) / (b - a);
        Ok((self.l[j - 1] + u * (self.l[j] - self.l[j - 1]), self.m[j - 1] + u * (self.m[j] - self.m[j - 1])))
    }

    /// `t0`, the knots strictly inside `(t0, t1)`, and `t1`.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Result<Vec<f64>> {
        self.check(t0)?;
        self.check(t1)?;
        let mut pts = vec![t0];
        pts.extend(self.times.iter().copied().filter(|t| *t > t0 && *t < t1));
        if t1 > t0 {
            pts.push(t1);
        }
        Ok(pts)
    }

    /// Whether `L` and `M` are constant on `[t0, t1]`.
    pub fn is_constant_on(&self, t0: f64, t1: f64) -> Result<bool> {
        let first = self.eval(t0)?;
        for t in self.breakpoints(t0, t1)? {
            if self.eval(t)? != first {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Tridiagonal generator of the truncated chain at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generator {
    pub window: Window,
    /// `-(lambda_n + mu_n)`.
    pub diag: Vec<f64>,
    /// `lambda_n` for the sites `n_min..n_max` (jump `n -> n+1`).
    pub upper: Vec<f64>,
    /// `mu_n` for the sites `n_min+1..=n_max` (jump `n -> n-1`).
    pub lower: Vec<f64>,
}

impl Generator {
    pub fn from_state(params: &ModelParams, window: Window, l: f64, m: f64) -> Result<Self> {
        let r = System::new(params, window)?.rates(l, m)?;
        let size = window.size();
        Ok(Self {
            window,
            diag: (0..size).map(|i| -(r.lambda[i] + r.mu[i])).collect(),
            upper: r.lambda[..size - 1].to_vec(),
            lower: r.mu[1..].to_vec(),
        })
    }

    /// Up-rates indexed by site (zero at the right edge).
    pub fn lambda(&self) -> Vec<f64> {
        let mut v = self.upper.clone();
        v.push(0.0);
        v
    }

    /// Down-rates indexed by site (zero at the left edge).
    pub fn mu(&self) -> Vec<f64> {
        let mut v = vec![0.0];
        v.extend_from_slice(&self.lower);
        v
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().map(|d| -d).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let size = self.window.size();
        let mut g = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.diag));
        for i in 0..size - 1 {
            g[(i, i + 1)] = self.upper[i];
            g[(i + 1, i)] = self.lower[i];
        }
        g
    }

    /// Induced norm of the off-diagonal part acting on measures from the
    /// right, in the `l1` norm with weights `exp(log_weights)`:
    /// `max_j (w_{j+1} lambda_j + w_{j-1} mu_j) / w_j`.
    pub fn offdiag_norm_with_weights(&self, log_weights: &[f64]) -> f64 {
        let (lam, mu) = (self.lambda(), self.mu());
        let size = self.window.size();
        (0..size)
            .map(|j| {
                let mut col = 0.0;
                if j + 1 < size {
                    col += lam[j] * (log_weights[j + 1] - log_weights[j]).exp();
                }
                if j > 0 {
                    col += mu[j] * (log_weights[j - 1] - log_weights[j]).exp();
                }
                col
            })
            .fold(0.0, f64::max)
    }

    /// The same induced norm with the weights `e^{n^2/2 + alpha|n|}`.
    pub fn offdiag_norm(&self, alpha: f64) -> f64 {
        self.offdiag_norm_with_weights(&alpha_log_weights(self.window, alpha))
    }
}

/// `ln` of the weights `e^{n^2/2 + alpha |n|}` of the norm the off-diagonal
/// part is measured in.
pub fn alpha_log_weights(window: Window, alpha: f64) -> Vec<f64> {
    window.sites().map(|n| (n * n) as f64 / 2.0 + alpha * n.abs() as f64).collect()
}

pub fn generator_at(params: &ModelParams, path: &FrozenPath, t: f64, window: Window) -> Result<Generator> {
    let (l, m) = path.eval(t)?;
    Generator::from_state(params, window, l, m)
}

/// `sup beta * e^{1/2 + |alpha|} (e^{-M} + e^{L})`, which dominates the
/// weighted norm of the off-diagonal part at `c = 1`.
pub fn lemma3_bound(params: &ModelParams, window: Window, l: f64, m: f64) -> Result<f64> {
    if params.c != 1.0 {
        return Err(Error::CNotOne { c: params.c });
    }
    let mut sup = params.beta.sup();
    if !sup.is_finite() {
        sup = crate::model::check_con1(&params.beta, window).sup_beta;
    }
    Ok(sup * (0.5 + params.alpha.abs()).exp() * ((-m).exp() + l.exp()))
}

/// Row-stochastic transition matrix `P(t0, t1)` on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub window: Window,
    pub t0: f64,
    pub t1: f64,
    /// `rows[(i, j)]` is the probability to go from site `i` to site `j`.
    pub rows: DMatrix<f64>,
}

impl Kernel {
    pub fn identity(window: Window, t: f64) -> Self {
        Self { window, t0: t, t1: t, rows: DMatrix::identity(window.size(), window.size()) }
    }

    /// `P(t0, u) P(u, t1)`.
    pub fn compose(&self, later: &Kernel) -> Kernel {
        assert_eq!(self.window, later.window, "kernels on different windows");
        Kernel { window: self.window, t0: self.t0, t1: later.t1, rows: &self.rows * &later.rows }
    }

    /// `p P`.
    pub fn apply(&self, p: &LatticeMeasure) -> Result<LatticeMeasure> {
        if p.window() != self.window {
            return Err(Error::InvalidArgument("measure and kernel live on different windows".into()));
        }
        let v = nalgebra::RowDVector::from_row_slice(p.values()) * &self.rows;
        let values: Vec<f64> = v.iter().copied().collect();
        if p.is_probability() {
            LatticeMeasure::clipped_probability(self.window, values)
        } else {
            LatticeMeasure::signed(self.window, values)
        }
    }

    /// Transition probability between sites.
    pub fn get(&self, from: i64, to: i64) -> f64 {
        match (self.window.index(from), self.window.index(to)) {
            (Some(i), Some(j)) => self.rows[(i, j)],
            _ => 0.0,
        }
    }

    /// `max_i |1 - sum_j P_ij|`.
    pub fn row_sum_deficit(&self) -> f64 {
        self.rows.row_iter().map(|r| (1.0 - r.sum()).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        (&self.rows - &other.rows).abs().max()
    }

    /// Induced norm of `self - other` for the right action in the weighted
    /// `l1` norm: `max_i sum_j |D_ij| w_j / w_i`.
    pub fn weighted_diff_norm(&self, other: &Kernel, log_weights: &[f64]) -> f64 {
        let d = &self.rows - &other.rows;
        let size = self.window.size();
        (0..size)
            .map(|i| (0..size).map(|j| d[(i, j)].abs() * (log_weights[j] - log_weights[i]).exp()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Poisson-weight tail threshold for uniformization.
const TAIL: f64 = 1e-17;

/// `p exp(h G)` for the tridiagonal generator with rates `lambda`, `mu`
/// (indexed by site, already truncated), by uniformization.
pub(crate) fn uniformized_forward(lambda: &[f64], mu: &[f64], p: &[f64], h: f64) -> Result<Vec<f64>> {
    let size = p.len();
    let rate = lambda.iter().zip(mu).map(|(a, b)| a + b).fold(0.0, f64::max);
    let a = rate * h;
    if a > MAX_EXPONENT || !a.is_finite() {
        return Err(Error::UniformizationOverflow { rate_times_step: a });
    }
    if a == 0.0 {
        return Ok(p.to_vec());
    }
    let stay: Vec<f64> = (0..size).map(|i| 1.0 - (lambda[i] + mu[i]) / rate).collect();
    let up: Vec<f64> = lambda.iter().map(|v| v / rate).collect();
    let down: Vec<f64> = mu.iter().map(|v| v / rate).collect();

    let mut weight = (-a).exp();
    let mut term = p.to_vec();
    let mut next = vec![0.0; size];
    let mut out: Vec<f64> = term.iter().map(|v| weight * v).collect();
    let mut k = 0usize;
    loop {
        for j in 0..size {
            let mut v = term[j] * stay[j];
            if j > 0 {
                v += term[j - 1] * up[j - 1];
            }
            if j + 1 < size {
                v += term[j + 1] * down[j + 1];
            }
            next[j] = v;
        }
        std::mem::swap(&mut term, &mut next);
        k += 1;
        weight *= a / k as f64;
        for (o, v) in out.iter_mut().zip(&term) {
            *o += weight * v;
        }
        let ratio = a / (k + 1) as f64;
        if ratio < 1.0 && weight * ratio / (1.0 - ratio) < TAIL {
            break;
        }
    }
    Ok(out)
}

/// Dense `exp(h G)` by uniformization, one row at a time.
fn uniformized_kernel(g: &Generator, h: f64) -> Result<DMatrix<f64>> {
    let size = g.window.size();
    let (lam, mu) = (g.lambda(), g.mu());
    let mut out = DMatrix::zeros(size, size);
    let mut e = vec![0.0; size];
    for i in 0..size {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[i] = 1.0;
        let row = uniformized_forward(&lam, &mu, &e, h)?;
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

fn matrix_power(base: &DMatrix<f64>, mut n: usize) -> DMatrix<f64> {
    let size = base.nrows();
    let mut result = DMatrix::identity(size, size);
    let mut b = base.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = &result * &b;
        }
        n >>= 1;
        if n > 0 {
            b = &b * &b;
        }
    }
    result
}

/// `P(t0, t1)` as a product of uniformized substep kernels with the generator
/// frozen at each substep's midpoint.
///
/// `substeps` sets the nominal step `(t1 - t0) / substeps`; every piece
/// between consecutive path knots is split into equal substeps no longer than it.
pub fn propagate(
    params: &ModelParams,
    path: &FrozenPath,
    t0: f64,
    t1: f64,
    window: Window,
    substeps: usize,
) -> Result<Kernel> {
    if t1 < t0 {
        return Err(Error::InvalidArgument(format!("t0 = {t0} > t1 = {t1}")));
    }
    if t1 == t0 {
        path.eval(t0)?;
        return Ok(Kernel::identity(window, t0));
    }
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be positive".into()));
    }
    let nominal = (t1 - t0) / substeps as f64;
    let pts = path.breakpoints(t0, t1)?;

    // Runs of identical factors: (midpoint L, midpoint M, step, count).
    let mut runs: Vec<(f64, f64, f64, usize)> = Vec::new();
    for w in pts.windows(2) {
        let len = w[1] - w[0];
        let n = ((len / nominal) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = len / n as f64;
        for k in 0..n {
            let mid = w[0] + (k as f64 + 0.5) * h;
            let (l, m) = path.eval(mid)?;
            match runs.last_mut() {
                Some(r) if r.0 == l && r.1 == m && r.2 == h => r.3 += 1,
                _ => runs.push((l, m, h, 1)),
            }
        }
    }

    let factors: Vec<DMatrix<f64>> = runs
        .par_iter()
        .map(|&(l, m, h, count)| {
            let g = Generator::from_state(params, window, l, m)?;
            Ok(matrix_power(&uniformized_kernel(&g, h)?, count))
        })
        .collect::<Result<_>>()?;
    let rows = factors
        .into_iter()
        .reduce(|acc, f| acc * f)
        .expect("at least one substep");
    Ok(Kernel { window, t0, t1, rows })
}

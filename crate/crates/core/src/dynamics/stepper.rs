//! Time steppers on the flat state vector `y = (p_{n_min}, ..., p_{n_max}, L, M)`.

use nalgebra::{DMatrix, DVector};

use crate::lattice::Window;
use crate::model::ModelParams;
use crate::numeric::{CompensatedSum, MAX_EXPONENT};
use crate::{Error, Result};

/// The truncated mean-field system on a fixed window with `ln beta` cached.
#[derive(Debug, Clone)]
pub(crate) struct System {
    pub(crate) window: Window,
    c: f64,
    c_lambda: f64,
    c_mu: f64,
    sites: Vec<f64>,
    log_beta_up: Vec<f64>,
    log_beta_down: Vec<f64>,
}

/// Truncated rates at fixed `(L, M)`.
#[derive(Debug, Clone)]
pub(crate) struct Rates {
    pub(crate) lambda: Vec<f64>,
    pub(crate) mu: Vec<f64>,
}

impl Rates {
    pub(crate) fn max_exit(&self) -> f64 {
        self.lambda.iter().zip(&self.mu).map(|(a, b)| a + b).fold(0.0, f64::max)
    }
}

impl System {
    pub(crate) fn new(params: &ModelParams, window: Window) -> Result<Self> {
        let mut log_beta_up = Vec::with_capacity(window.size());
        let mut log_beta_down = Vec::with_capacity(window.size());
        for n in window.sites() {
            log_beta_up.push(params.beta(n)?.ln());
            log_beta_down.push(params.beta(n - 1)?.ln());
        }
        Ok(Self {
            window,
            c: params.c,
            c_lambda: params.c_lambda,
            c_mu: params.c_mu,
            sites: window.sites().map(|n| n as f64).collect(),
            log_beta_up,
            log_beta_down,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.window.size() + 2
    }

    pub(crate) fn rates(&self, l: f64, m: f64) -> Result<Rates> {
        let size = self.window.size();
        let mut lambda = vec![0.0; size];
        let mut mu = vec![0.0; size];
        for i in 0..size {
            let n = self.sites[i];
            if i + 1 < size {
                lambda[i] = checked_exp(self.log_beta_up[i] - self.c * (n - l), self.window.site(i))?;
            }
            if i > 0 {
                mu[i] = checked_exp(self.log_beta_down[i] + self.c * (n - m), self.window.site(i))?;
            }
        }
        Ok(Rates { lambda, mu })
    }

    /// Writes the right-hand side at `y` into `out` and returns the rates used.
    pub(crate) fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<Rates> {
        let size = self.window.size();
        let (l, m) = (y[size], y[size + 1]);
        let r = self.rates(l, m)?;
        let p = &y[..size];
        let mut sl = CompensatedSum::new();
        let mut sm = CompensatedSum::new();
        for i in 0..size {
            let mut v = -(r.lambda[i] + r.mu[i]) * p[i];
            if i > 0 {
                v += r.lambda[i - 1] * p[i - 1];
            }
            if i + 1 < size {
                v += r.mu[i + 1] * p[i + 1];
            }
            out[i] = v;
            sl.add(p[i] * r.lambda[i]);
            sm.add(p[i] * r.mu[i]);
        }
        out[size] = -sl.value() + self.c_lambda;
        out[size + 1] = sm.value() - self.c_mu;
        Ok(r)
    }

    /// Analytic Jacobian at `y`.
    pub(crate) fn jacobian(&self, y: &[f64], r: &Rates) -> DMatrix<f64> {
        let size = self.window.size();
        let dim = size + 2;
        let (il, im) = (size, size + 1);
        let p = &y[..size];
        let c = self.c;
        let mut j = DMatrix::zeros(dim, dim);
        let mut pl = 0.0;
        let mut pm = 0.0;
        for i in 0..size {
            j[(i, i)] = -(r.lambda[i] + r.mu[i]);
            let mut dl = -r.lambda[i] * p[i];
            let mut dm = r.mu[i] * p[i];
            if i > 0 {
                j[(i, i - 1)] = r.lambda[i - 1];
                dl += r.lambda[i - 1] * p[i - 1];
            }
            if i + 1 < size {
                j[(i, i + 1)] = r.mu[i + 1];
                dm -= r.mu[i + 1] * p[i + 1];
            }
            j[(i, il)] = c * dl;
            j[(i, im)] = c * dm;
            j[(il, i)] = -r.lambda[i];
            j[(im, i)] = r.mu[i];
            pl += p[i] * r.lambda[i];
            pm += p[i] * r.mu[i];
        }
        j[(il, il)] = -c * pl;
        j[(im, im)] = -c * pm;
        j
    }
}

fn checked_exp(log_rate: f64, site: i64) -> Result<f64> {
    if log_rate > MAX_EXPONENT || log_rate.is_nan() {
        return Err(Error::RateOverflow { site, log_rate });
    }
    Ok(log_rate.exp())
}

/// Outcome of one attempted step.
pub(crate) struct Trial {
    pub(crate) y: DVector<f64>,
    /// Scaled error estimate; `None` for methods without one.
    pub(crate) err: Option<f64>,
}

/// Linearly implicit Euler with polynomial extrapolation over the step
/// number sequence `1, 2, ..., stages`.
pub(crate) fn extrapolated_step(
    sys: &System,
    y0: &DVector<f64>,
    h: f64,
    stages: usize,
    rtol: f64,
    atol: f64,
) -> Result<Trial> {
    let dim = sys.dim();
    let mut f0 = vec![0.0; dim];
    let r0 = sys.eval(y0.as_slice(), &mut f0)?;
    let jac = sys.jacobian(y0.as_slice(), &r0);
    let f0 = DVector::from_vec(f0);

    let mut table: Vec<Vec<DVector<f64>>> = Vec::with_capacity(stages);
    let mut buf = vec![0.0; dim];
    for j in 0..stages {
        let nj = j + 1;
        let hj = h / nj as f64;
        let a = DMatrix::identity(dim, dim) - &jac * hj;
        let lu = a.lu();
        let mut y = y0.clone();
        for i in 0..nj {
            let rhs = if i == 0 {
                &f0 * hj
            } else {
                sys.eval(y.as_slice(), &mut buf)?;
                DVector::from_column_slice(&buf) * hj
            };
            let delta = lu.solve(&rhs).ok_or(Error::StepSizeUnderflow { t: f64::NAN, dt: h })?;
            y += delta;
        }
        let mut row = Vec::with_capacity(j + 1);
        row.push(y);
        for q in 1..=j {
            let ratio = nj as f64 / (nj - q) as f64 - 1.0;
            let next = &row[q - 1] + (&row[q - 1] - &table[j - 1][q - 1]) / ratio;
            row.push(next);
        }
        table.push(row);
    }
    let last = &table[stages - 1];
    let y1 = last[stages - 1].clone();
    let err = if stages >= 2 {
        let diff = &y1 - &last[stages - 2];
        let mut acc = 0.0;
        for i in 0..dim {
            let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
            acc += (diff[i] / sc).powi(2);
        }
        Some((acc / dim as f64).sqrt())
    } else {
        None
    };
    Ok(Trial { y: y1, err })
}

/// Classical fourth-order Runge-Kutta step; enforces `h * max exit rate < 0.5`.
pub(crate) fn rk4_step(sys: &System, y0: &DVector<f64>, h: f64) -> Result<Trial> {
    let dim = sys.dim();
    let mut k1 = vec![0.0; dim];
    let r = sys.eval(y0.as_slice(), &mut k1)?;
    let product = h * r.max_exit();
    if product >= 0.5 {
        return Err(Error::UnstableStep { product });
    }
    let k1 = DVector::from_vec(k1);
    let mut buf = vec![0.0; dim];
    let mut stage = |y: &DVector<f64>| -> Result<DVector<f64>> {
        sys.eval(y.as_slice(), &mut buf)?;
        Ok(DVector::from_column_slice(&buf))
    };
    let k2 = stage(&(y0 + &k1 * (0.5 * h)))?;
    let k3 = stage(&(y0 + &k2 * (0.5 * h)))?;
    let k4 = stage(&(y0 + &k3 * h))?;
    let y = y0 + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    Ok(Trial { y, err: None })
}

/// Exponential substep: the `p`-block is advanced exactly for frozen `(L, M)`
/// by uniformization; `L` and `M` are then updated from the midpoint
/// averages, with their sum corrected so that `K` is conserved exactly.
pub(crate) fn exponential_step(sys: &System, y0: &DVector<f64>, h: f64) -> Result<Trial> {
    let size = sys.window.size();
    let (l, m) = (y0[size], y0[size + 1]);
    let r = sys.rates(l, m)?;
    let p0 = &y0.as_slice()[..size];
    let p1 = crate::kernel::uniformized_forward(&r.lambda, &r.mu, p0, h)?;

    let mut sl = CompensatedSum::new();
    let mut sm = CompensatedSum::new();
    let mut dmean = CompensatedSum::new();
    for i in 0..size {
        let pbar = 0.5 * (p0[i] + p1[i]);
        sl.add(pbar * r.lambda[i]);
        sm.add(pbar * r.mu[i]);
        dmean.add(sys.sites[i] * (p1[i] - p0[i]));
    }
    let a = h * (-sl.value() + sys.c_lambda);
    let b = h * (sm.value() - sys.c_mu);
    let fix = 0.5 * (-dmean.value() - (a + b));
    let mut y = DVector::zeros(sys.dim());
    y.as_mut_slice()[..size].copy_from_slice(&p1);
    y[size] = l + a + fix;
    y[size + 1] = m + b + fix;
    Ok(Trial { y, err: None })
}

//! Jump-count expansion of the kernel for a generator that is constant on
//! `[t0, t1]`.
//!
//! Splitting `G = H0 + V` into diagonal and off-diagonal parts, the term with
//! `k` jumps is a sum over jump paths `x_0 -> ... -> x_k` of
//! `V_{x_0 x_1} ... V_{x_{k-1} x_k}` times the integral of
//! `exp(sum_j -q_{x_j} s_j)` over the simplex `s_0 + ... + s_k = dt`, which is
//! `dt^k exp[z_0, ..., z_k]` (a divided difference of `exp` at `z_j = -q_{x_j} dt`).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::{FrozenPath, Generator, Kernel};
use crate::lattice::Window;
use crate::model::ModelParams;
use crate::{Error, Result};

/// Largest supported number of jumps.
pub const MAX_SERIES_ORDER: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DysonExpansion {
    #[serde(skip)]
    pub kernel: Kernel,
    pub k_max: usize,
    /// `||V||` in the weighted norm of the model's `alpha`.
    pub v_norm: f64,
    /// `(||V|| dt)^{k+1} / (k+1)! * e^{||V|| dt}`.
    pub remainder_bound: f64,
}

/// `exp[z_0, ..., z_k]`: the top-right entry of the exponential of the
/// bidiagonal matrix with diagonal `z` and unit superdiagonal.
fn exp_divided_difference(z: &[f64]) -> f64 {
    let k = z.len();
    if k == 1 {
        return z[0].exp();
    }
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        a[(i, i)] = z[i];
        if i + 1 < k {
            a[(i, i + 1)] = 1.0;
        }
    }
    a.exp()[(0, k - 1)]
}

pub fn remainder_bound(v_norm: f64, dt: f64, k_max: usize) -> f64 {
    let x = v_norm * dt;
    let mut term = x.exp();
    for j in 1..=k_max + 1 {
        term *= x / j as f64;
    }
    term
}

pub fn dyson_series(
    params: &ModelParams,
    path: &FrozenPath,
    t0: f64,
    t1: f64,
    window: Window,
    k_max: usize,
) -> Result<DysonExpansion> {
    if t1 < t0 {
        return Err(Error::InvalidArgument(format!("t0 = {t0} > t1 = {t1}")));
    }
    if k_max > MAX_SERIES_ORDER {
        return Err(Error::InvalidArgument(format!("k_max = {k_max} exceeds {MAX_SERIES_ORDER}")));
    }
    if !path.is_constant_on(t0, t1)? {
        return Err(Error::NonConstantPath);
    }
    let (l, m) = path.eval(t0)?;
    let g = Generator::from_state(params, window, l, m)?;
    let dt = t1 - t0;
    let size = window.size();
    let lam = g.lambda();
    let mu = g.mu();
    let z: Vec<f64> = g.diag.iter().map(|d| d * dt).collect();

    let rows: Vec<Vec<f64>> = (0..size)
        .into_par_iter()
        .map(|start| {
            let mut row = vec![0.0; size];
            // Depth-first over jump paths: (sites visited, product of V entries).
            let mut stack: Vec<(Vec<usize>, f64)> = vec![(vec![start], 1.0)];
            while let Some((sites, weight)) = stack.pop() {
                let jumps = sites.len() - 1;
                let nodes: Vec<f64> = sites.iter().map(|&x| z[x]).collect();
                let last = *sites.last().expect("nonempty");
                row[last] += weight * dt.powi(jumps as i32) * exp_divided_difference(&nodes);
                if jumps < k_max {
                    if lam[last] > 0.0 {
                        let mut next = sites.clone();
                        next.push(last + 1);
                        stack.push((next, weight * lam[last]));
                    }
                    if mu[last] > 0.0 {
                        let mut next = sites;
                        next.push(last - 1);
                        stack.push((next, weight * mu[last]));
                    }
                }
            }
            row
        })
        .collect();

    let mut mat = DMatrix::zeros(size, size);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            mat[(i, j)] = v;
        }
    }
    let v_norm = g.offdiag_norm(params.alpha);
    Ok(DysonExpansion {
        kernel: Kernel { window, t0, t1, rows: mat },
        k_max,
        v_norm,
        remainder_bound: remainder_bound(v_norm, dt, k_max),
    })
}

#[cfg(test)]
mod tests {
    use super::super::{alpha_log_weights, propagate};
    use super::*;

    #[test]
    fn divided_differences_of_exp() {
        // exp[a, b] = (e^b - e^a) / (b - a); exp[a, a] = e^a.
        let (a, b) = (-0.3, 1.1);
        assert!((exp_divided_difference(&[a, b]) - (b.exp() - a.exp()) / (b - a)).abs() < 1e-14);
        assert!((exp_divided_difference(&[a, a]) - a.exp()).abs() < 1e-14);
        // exp[0, 0, 0] = 1/2.
        assert!((exp_divided_difference(&[0.0, 0.0, 0.0]) - 0.5).abs() < 1e-14);
        let (x, y, w) = (-2.0f64, -0.5f64, -5.0f64);
        let xy = (y.exp() - x.exp()) / (y - x);
        let yw = (w.exp() - y.exp()) / (w - y);
        assert!((exp_divided_difference(&[x, y, w]) - (yw - xy) / (w - x)).abs() < 1e-14);
    }

    #[test]
    fn zero_jumps_is_survival() {
        let p = ModelParams::benchmark();
        let win = Window::symmetric(3).unwrap();
        let path = FrozenPath::constant(0.5, 0.1, 0.0, 0.2).unwrap();
        let d = dyson_series(&p, &path, 0.0, 0.2, win, 0).unwrap();
        let g = Generator::from_state(&p, win, 0.5, 0.1).unwrap();
        for i in 0..win.size() {
            for j in 0..win.size() {
                let expect = if i == j { (g.diag[i] * 0.2).exp() } else { 0.0 };
                assert!((d.kernel.rows[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn series_error_within_remainder_bound() {
        let p = ModelParams::benchmark();
        let win = Window::symmetric(8).unwrap();
        let path = FrozenPath::constant(1.3, -0.4, 0.0, 0.1).unwrap();
        let exact = propagate(&p, &path, 0.0, 0.1, win, 10).unwrap();
        let w = alpha_log_weights(win, p.alpha);
        let mut prev_bound = f64::INFINITY;
        for k in [2, 4, 6] {
            let d = dyson_series(&p, &path, 0.0, 0.1, win, k).unwrap();
            let diff = d.kernel.weighted_diff_norm(&exact, &w);
            assert!(diff < d.remainder_bound, "k = {k}: {diff:e} vs {:e}", d.remainder_bound);
            assert!(d.remainder_bound < prev_bound);
            prev_bound = d.remainder_bound;
        }
    }

    #[test]
    fn remainder_ratio_test() {
        let b: Vec<f64> = (0..10).map(|k| remainder_bound(8.5, 0.1, k)).collect();
        for w in b.windows(3) {
            assert!(w[2] / w[1] < w[1] / w[0]);
        }
    }

    #[test]
    fn rejects_varying_path() {
        let p = ModelParams::benchmark();
        let path = FrozenPath::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let e = dyson_series(&p, &path, 0.0, 0.5, Window::symmetric(3).unwrap(), 2).unwrap_err();
        assert_eq!(e, Error::NonConstantPath);
    }
}

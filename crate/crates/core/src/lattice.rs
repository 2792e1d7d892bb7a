//! Finite windows of the integer lattice, measures and functions on them, and
//! the Gaussian-weighted norms `||.||_alpha^+` (measures) and `||.||_alpha^-`
//! (functions) together with their duality pairing.

use serde::{Deserialize, Serialize};

use crate::numeric::{compensated_sum, MAX_EXPONENT};
use crate::{Error, Result};

/// Tolerance on `|sum p - 1|` for probability measures.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// A contiguous block of sites `[n_min, n_min + size - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    n_min: i64,
    size: usize,
}

impl Window {
    pub fn new(n_min: i64, size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::InvalidWindow(format!("size {size} < 3")));
        }
        Ok(Self { n_min, size })
    }

    /// The window `[-m, m]`.
    pub fn symmetric(m: u32) -> Result<Self> {
        Self::new(-(m as i64), 2 * m as usize + 1)
    }

    pub fn from_bounds(n_min: i64, n_max: i64) -> Result<Self> {
        if n_max < n_min {
            return Err(Error::InvalidWindow(format!("[{n_min}, {n_max}] is empty")));
        }
        Self::new(n_min, (n_max - n_min + 1) as usize)
    }

    pub fn n_min(&self) -> i64 {
        self.n_min
    }

    pub fn n_max(&self) -> i64 {
        self.n_min + self.size as i64 - 1
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.n_min && n <= self.n_max()
    }

    /// Storage index of site `n`, if it lies in the window.
    pub fn index(&self, n: i64) -> Option<usize> {
        self.contains(n).then(|| (n - self.n_min) as usize)
    }

    pub fn site(&self, index: usize) -> i64 {
        self.n_min + index as i64
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> + Clone {
        self.n_min..=self.n_max()
    }

    /// Smallest window containing both.
    pub fn union(&self, other: &Window) -> Window {
        let lo = self.n_min.min(other.n_min);
        let hi = self.n_max().max(other.n_max());
        Window { n_min: lo, size: (hi - lo + 1) as usize }
    }
}

fn log_weight_plus(n: i64, alpha: f64) -> f64 {
    let x = n as f64;
    0.5 * x * x + alpha * x.abs()
}

/// A finitely supported real measure (one value per window site).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeMeasure {
    window: Window,
    values: Vec<f64>,
    is_probability: bool,
}

impl LatticeMeasure {
    /// A signed measure. Values must be finite.
    pub fn signed(window: Window, values: Vec<f64>) -> Result<Self> {
        check_len(&window, values.len())?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite entry {v}")));
        }
        Ok(Self { window, values, is_probability: false })
    }

    /// A probability measure: finite, nonnegative, mass within [`MASS_TOLERANCE`] of one.
    pub fn probability(window: Window, values: Vec<f64>) -> Result<Self> {
        let mut m = Self::signed(window, values)?;
        if let Some(v) = m.values.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidMeasure(format!("negative probability {v}")));
        }
        let mass = m.mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!("total mass {mass} != 1")));
        }
        m.is_probability = true;
        Ok(m)
    }

    /// Point mass at `n`.
    pub fn delta(window: Window, n: i64) -> Result<Self> {
        let i = window
            .index(n)
            .ok_or_else(|| Error::InvalidMeasure(format!("site {n} outside window")))?;
        let mut values = vec![0.0; window.size()];
        values[i] = 1.0;
        Self::probability(window, values)
    }

    /// Uniform probability on `window`.
    pub fn uniform(window: Window) -> Self {
        let w = 1.0 / window.size() as f64;
        Self { window, values: vec![w; window.size()], is_probability: true }
    }

    /// Clip entries below zero and rescale to unit mass.
    pub fn clipped_probability(window: Window, mut values: Vec<f64>) -> Result<Self> {
        check_len(&window, values.len())?;
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mass = compensated_sum(values.iter().copied());
        if mass.is_nan() || mass <= 0.0 || !mass.is_finite() {
            return Err(Error::InvalidMeasure(format!("cannot renormalize mass {mass}")));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Self::probability(window, values)
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_probability(&self) -> bool {
        self.is_probability
    }

    /// Value at site `n` (zero off the window).
    pub fn get(&self, n: i64) -> f64 {
        self.window.index(n).map_or(0.0, |i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.window.sites().zip(self.values.iter().copied())
    }

    pub fn mass(&self) -> f64 {
        compensated_sum(self.values.iter().copied())
    }

    /// Mass at the two edge sites.
    pub fn boundary_mass(&self) -> f64 {
        self.values[0].abs() + self.values[self.values.len() - 1].abs()
    }
}

fn check_len(window: &Window, len: usize) -> Result<()> {
    if len != window.size() {
        return Err(Error::InvalidMeasure(format!(
            "{} values for a window of {} sites",
            len,
            window.size()
        )));
    }
    Ok(())
}

/// A real function on a window (an element of the dual space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeFunction {
    window: Window,
    values: Vec<f64>,
}

impl LatticeFunction {
    pub fn new(window: Window, values: Vec<f64>) -> Result<Self> {
        check_len(&window, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite function value".into()));
        }
        Ok(Self { window, values })
    }

    pub fn from_fn(window: Window, f: impl Fn(i64) -> f64) -> Result<Self> {
        Self::new(window, window.sites().map(f).collect())
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, n: i64) -> f64 {
        self.window.index(n).map_or(0.0, |i| self.values[i])
    }
}

/// `sum_n e^{n^2/2 + alpha|n|} |m_n|`, weights formed in log space.
pub fn norm_plus(m: &LatticeMeasure, alpha: f64) -> Result<f64> {
    weighted_l1(m.iter(), |n| log_weight_plus(n, alpha))
}

/// `sum_n e^{-n^2/2 - alpha|n|} |f_n|`.
pub fn norm_minus(f: &LatticeFunction, alpha: f64) -> Result<f64> {
    weighted_l1(
        f.window.sites().zip(f.values.iter().copied()),
        |n| -log_weight_plus(n, alpha),
    )
}

fn weighted_l1(
    entries: impl Iterator<Item = (i64, f64)>,
    log_weight: impl Fn(i64) -> f64,
) -> Result<f64> {
    let mut terms = Vec::new();
    for (n, v) in entries {
        if v == 0.0 {
            continue;
        }
        let e = v.abs().ln() + log_weight(n);
        if e > MAX_EXPONENT {
            return Err(Error::NormOverflow);
        }
        terms.push(e.exp());
    }
    let total = compensated_sum(terms);
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NormOverflow)
    }
}

/// `<m, f> = sum_n m_n f_n` over the overlap of the two windows.
pub fn pairing(m: &LatticeMeasure, f: &LatticeFunction) -> f64 {
    let value = compensated_sum(m.iter().map(|(n, v)| v * f.get(n)));
    #[cfg(debug_assertions)]
    if let (Ok(a), Ok(b)) = (norm_plus(m, 0.0), norm_minus(f, 0.0)) {
        debug_assert!(value.abs() <= a * b * (1.0 + 1e-12) + 1e-300);
    }
    value
}

/// `sum_n n p_n`.
pub fn mean_position(m: &LatticeMeasure) -> f64 {
    compensated_sum(m.iter().map(|(n, v)| n as f64 * v))
}

/// Half the l1 distance over the union of the supports' windows.
pub fn total_variation(a: &LatticeMeasure, b: &LatticeMeasure) -> f64 {
    let w = a.window.union(&b.window);
    0.5 * compensated_sum(w.sites().map(|n| (a.get(n) - b.get(n)).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn w(lo: i64, hi: i64) -> Window {
        Window::from_bounds(lo, hi).unwrap()
    }

    #[test]
    fn window_rejects_tiny_sizes() {
        assert!(Window::new(0, 2).is_err());
        let win = Window::symmetric(2).unwrap();
        assert_eq!((win.n_min(), win.n_max(), win.size()), (-2, 2, 5));
        assert_eq!(win.index(-2), Some(0));
        assert_eq!(win.index(3), None);
    }

    #[test]
    fn norm_plus_examples() {
        let win = w(-3, 3);
        let d0 = LatticeMeasure::delta(win, 0).unwrap();
        assert_eq!(norm_plus(&d0, 1.7).unwrap(), 1.0);
        let d2 = LatticeMeasure::delta(win, 2).unwrap();
        assert!((norm_plus(&d2, 0.0).unwrap() - E * E).abs() < 1e-13);
        let sym = LatticeMeasure::probability(win, vec![0.0, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0]).unwrap();
        assert!((norm_plus(&sym, 1.0).unwrap() - 1.5f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn norm_minus_examples() {
        let win = w(-2, 2);
        let ind = LatticeFunction::from_fn(win, |n| if n == 0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(norm_minus(&ind, -0.8).unwrap(), 1.0);
        let ones = LatticeFunction::from_fn(win, |_| 1.0).unwrap();
        let expect = 1.0 + 2.0 * (-0.5f64).exp() + 2.0 * (-2.0f64).exp();
        assert!((norm_minus(&ones, 0.0).unwrap() - expect).abs() < 1e-15);
        let g = LatticeFunction::from_fn(w(-3, 3), |n| (0.5 * (n * n) as f64).exp()).unwrap();
        assert!((norm_minus(&g, 0.0).unwrap() - 7.0).abs() < 1e-13);
    }

    #[test]
    fn norm_plus_overflow_is_reported() {
        let win = w(0, 40);
        let m = LatticeMeasure::delta(win, 40).unwrap();
        assert_eq!(norm_plus(&m, 0.0), Err(Error::NormOverflow));
    }

    #[test]
    fn pairing_examples() {
        let win = w(-10, 10);
        let id = LatticeFunction::from_fn(win, |n| n as f64).unwrap();
        let f = LatticeFunction::from_fn(win, |n| (n * n) as f64 + 0.25).unwrap();
        assert_eq!(pairing(&LatticeMeasure::delta(win, 0).unwrap(), &f), 0.25);
        let u = LatticeMeasure::uniform(w(-1, 1));
        assert_eq!(pairing(&u, &id), 0.0);
        let gauss: Vec<f64> = win.sites().map(|n| (-(n * n) as f64).exp()).collect();
        let z: f64 = gauss.iter().sum();
        let g = LatticeMeasure::probability(win, gauss.iter().map(|v| v / z).collect()).unwrap();
        assert!(pairing(&g, &id).abs() < 1e-16);
    }

    #[test]
    fn mean_position_examples() {
        let win = w(-1, 6);
        assert_eq!(mean_position(&LatticeMeasure::delta(win, 5).unwrap()), 5.0);
        let half = LatticeMeasure::probability(w(0, 2), vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(mean_position(&half), 0.5);
    }

    #[test]
    fn total_variation_examples() {
        let win = w(-1, 1);
        let d0 = LatticeMeasure::delta(win, 0).unwrap();
        let d1 = LatticeMeasure::delta(win, 1).unwrap();
        assert_eq!(total_variation(&d0, &d0), 0.0);
        assert_eq!(total_variation(&d0, &d1), 1.0);
        let u01 = LatticeMeasure::probability(w(0, 2), vec![0.5, 0.5, 0.0]).unwrap();
        assert_eq!(total_variation(&d0, &u01), 0.5);
    }

    #[test]
    fn probability_validation() {
        let win = w(0, 2);
        assert!(LatticeMeasure::probability(win, vec![0.5, 0.6, 0.0]).is_err());
        assert!(LatticeMeasure::probability(win, vec![1.1, -0.1, 0.0]).is_err());
        assert!(LatticeMeasure::signed(win, vec![f64::NAN, 0.0, 0.0]).is_err());
        let c = LatticeMeasure::clipped_probability(win, vec![0.5, -1e-12, 0.5]).unwrap();
        assert_eq!(c.values()[1], 0.0);
        assert!((c.mass() - 1.0).abs() < 1e-15);
    }

    fn arb_measure(win: Window) -> impl Strategy<Value = LatticeMeasure> {
        prop::collection::vec(-1.0f64..1.0, win.size())
            .prop_map(move |v| LatticeMeasure::signed(win, v).unwrap())
    }

    fn arb_probability(win: Window) -> impl Strategy<Value = LatticeMeasure> {
        prop::collection::vec(0.0f64..1.0, win.size()).prop_filter_map("zero mass", move |v| {
            let z: f64 = v.iter().sum();
            (z > 1e-3).then(|| {
                LatticeMeasure::probability(win, v.iter().map(|x| x / z).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn norm_plus_is_a_norm(a in arb_measure(w(-6, 6)), b in arb_measure(w(-6, 6)),
                               k in -3.0f64..3.0, alpha in -2.0f64..2.0) {
            let na = norm_plus(&a, alpha).unwrap();
            let nb = norm_plus(&b, alpha).unwrap();
            let scaled = LatticeMeasure::signed(a.window(), a.values().iter().map(|v| k * v).collect()).unwrap();
            prop_assert!((norm_plus(&scaled, alpha).unwrap() - k.abs() * na).abs() <= 1e-12 * na.max(1.0));
            let sum = LatticeMeasure::signed(a.window(),
                a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect()).unwrap();
            prop_assert!(norm_plus(&sum, alpha).unwrap() <= (na + nb) * (1.0 + 1e-12));
        }

        #[test]
        fn duality_bound(m in arb_measure(w(-5, 5)),
                         f in prop::collection::vec(-50.0f64..50.0, 11),
                         alpha in -2.0f64..2.0) {
            let f = LatticeFunction::new(w(-5, 5), f).unwrap();
            let lhs = pairing(&m, &f).abs();
            let rhs = norm_plus(&m, alpha).unwrap() * norm_minus(&f, alpha).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn total_variation_is_a_bounded_metric(a in arb_probability(w(-3, 3)),
                                               b in arb_probability(w(-3, 3)),
                                               c in arb_probability(w(-2, 4))) {
            let ab = total_variation(&a, &b);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
            prop_assert!((ab - total_variation(&b, &a)).abs() < 1e-15);
            prop_assert!(ab <= total_variation(&a, &c) + total_variation(&c, &b) + 1e-12);
        }
    }
}

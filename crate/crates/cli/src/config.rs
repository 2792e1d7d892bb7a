//! Run configuration. Every section is optional and defaults to the
//! benchmark setting: `beta = 1`, `c = C_lambda = C_mu = 1`, window
//! `[-25, 25]`, `p(0) = delta_0`, `L(0) = 1.3`, `M(0) = -0.4`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nlwalk::dynamics::{IntegratorConfig, SystemState};
use nlwalk::equilibrium::discrete_gaussian;
use nlwalk::{BetaProfile, LatticeMeasure, ModelParams, Window};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub window: WindowSection,
    pub initial: InitialSection,
    pub integrator: IntegratorConfig,
    pub simulate: SimulateSection,
    pub fixed_point: FixedPointSection,
    pub solve_s: SolveSSection,
    pub kernel_check: KernelCheckSection,
    pub sample_paths: SamplePathsSection,
    pub particles: ParticlesSection,
    pub diagnose: DiagnoseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub c: f64,
    pub c_lambda: f64,
    pub c_mu: f64,
    pub alpha: f64,
    pub beta: BetaProfile,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { c: 1.0, c_lambda: 1.0, c_mu: 1.0, alpha: 0.0, beta: BetaProfile::constant(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    /// Half-width: the window is `[-m, m]`.
    pub m: u32,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self { m: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialLaw {
    Delta { n: i64 },
    Gaussian { s: f64, c: f64 },
    /// `values[i]` is the mass at `offset + i`; the rest of the window is empty.
    Table { offset: i64, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub l0: f64,
    pub m0: f64,
    pub p: InitialLaw,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { l0: 1.3, m0: -0.4, p: InitialLaw::Delta { n: 0 } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    None,
    Converge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub t_end: f64,
    pub verdict: Verdict,
    /// `C` in the convergence condition on `beta`.
    pub condition_constant: f64,
    pub w_slack: f64,
    /// Largest final distance to the fixed point accepted by `verdict = "converge"`.
    pub tv_tolerance: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { t_end: 50.0, verdict: Verdict::None, condition_constant: 0.1, w_slack: 1e-9, tv_tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointSection {
    /// Defaults to the `s` on the level set of the initial condition's `K`.
    pub s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSSection {
    /// Defaults to the initial condition's `K`.
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelCheckSection {
    pub t_end: f64,
    pub window_m: u32,
    pub splits: usize,
    pub substeps_per_unit: f64,
    pub series_dt: f64,
    pub series_orders: Vec<usize>,
}

impl Default for KernelCheckSection {
    fn default() -> Self {
        Self {
            t_end: 2.0,
            window_m: 8,
            splits: 3,
            substeps_per_unit: 1000.0,
            series_dt: 0.1,
            series_orders: vec![2, 4, 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePathsSection {
    pub n_paths: usize,
    pub sample_times: Vec<f64>,
    /// Spacing of the recorded `(L, M)` path the walkers are driven by.
    pub path_spacing: f64,
}

impl Default for SamplePathsSection {
    fn default() -> Self {
        Self { n_paths: 20000, sample_times: vec![0.5, 1.0], path_spacing: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticlesSection {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub sample_times: Vec<f64>,
}

impl Default for ParticlesSection {
    fn default() -> Self {
        Self { n: 10_000, dt: 1e-3, t_end: 5.0, sample_times: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    /// Defaults to `trajectory.csv` in the output directory.
    pub input: Option<PathBuf>,
    pub slack: f64,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self { input: None, slack: 1e-9 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks everything that can be checked without running a computation.
    pub fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        self.initial_state()?;
        self.integrator.validate()?;
        let bad = |msg: String| Err(CliError::Config(msg));
        let positive = |name: &str, v: f64| -> Result<(), CliError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                bad(format!("{name} = {v} must be positive"))
            }
        };
        let times = |name: &str, ts: &[f64]| -> Result<(), CliError> {
            if ts.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || ts.windows(2).any(|w| w[1] <= w[0]) {
                return bad(format!("{name} must be nonnegative and strictly increasing"));
            }
            Ok(())
        };
        positive("simulate.t_end", self.simulate.t_end)?;
        positive("simulate.condition_constant", self.simulate.condition_constant)?;
        positive("simulate.tv_tolerance", self.simulate.tv_tolerance)?;
        if self.simulate.w_slack.is_nan() || self.simulate.w_slack < 0.0 {
            return bad("simulate.w_slack must be nonnegative".into());
        }
        if let Some(s) = self.fixed_point.s {
            if !s.is_finite() {
                return bad("fixed_point.s must be finite".into());
            }
        }
        if let Some(k) = self.solve_s.k {
            if !k.is_finite() {
                return bad("solve_s.k must be finite".into());
            }
        }
        let kc = &self.kernel_check;
        positive("kernel_check.t_end", kc.t_end)?;
        positive("kernel_check.substeps_per_unit", kc.substeps_per_unit)?;
        positive("kernel_check.series_dt", kc.series_dt)?;
        Window::symmetric(kc.window_m)?;
        if kc.series_dt > kc.t_end {
            return bad("kernel_check.series_dt exceeds kernel_check.t_end".into());
        }
        if kc.series_orders.iter().any(|k| *k > nlwalk::kernel::MAX_SERIES_ORDER) {
            return bad(format!("series orders must be at most {}", nlwalk::kernel::MAX_SERIES_ORDER));
        }
        let sp = &self.sample_paths;
        positive("sample_paths.path_spacing", sp.path_spacing)?;
        if sp.n_paths == 0 || sp.sample_times.is_empty() {
            return bad("sample_paths needs paths and sample times".into());
        }
        times("sample_paths.sample_times", &sp.sample_times)?;
        let pc = &self.particles;
        positive("particles.dt", pc.dt)?;
        positive("particles.t_end", pc.t_end)?;
        if pc.n == 0 {
            return bad("particles.n must be positive".into());
        }
        times("particles.sample_times", &pc.sample_times)?;
        if self.diagnose.slack.is_nan() || self.diagnose.slack < 0.0 {
            return bad("diagnose.slack must be nonnegative".into());
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        let m = &self.model;
        Ok(ModelParams::new(m.c, m.c_lambda, m.c_mu, m.beta.clone(), m.alpha)?)
    }

    pub fn window(&self) -> Result<Window, CliError> {
        Ok(Window::symmetric(self.window.m)?)
    }

    pub fn initial_law(&self) -> Result<LatticeMeasure, CliError> {
        let win = self.window()?;
        let p = match &self.initial.p {
            InitialLaw::Delta { n } => LatticeMeasure::delta(win, *n)?,
            InitialLaw::Gaussian { s, c } => discrete_gaussian(*c, *s, win)?,
            InitialLaw::Table { offset, values } => {
                let mut full = vec![0.0; win.size()];
                for (i, v) in values.iter().enumerate() {
                    let n = offset + i as i64;
                    let idx = win
                        .index(n)
                        .ok_or_else(|| CliError::Config(format!("initial table site {n} is outside the window")))?;
                    full[idx] = *v;
                }
                LatticeMeasure::probability(win, full)?
            }
        };
        Ok(p)
    }

    pub fn initial_state(&self) -> Result<SystemState, CliError> {
        Ok(SystemState::new(self.initial_law()?, self.initial.l0, self.initial.m0, 0.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_benchmark() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.params().unwrap(), ModelParams::benchmark());
        let st = cfg.initial_state().unwrap();
        assert_eq!((st.l, st.m, st.p.get(0)), (1.3, -0.4, 1.0));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\ncc = 1.0\n").is_err());
        assert!(toml::from_str::<RunConfig>("speed = 3\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let text = r#"
seed = 7
[model]
c = 0.5
beta = { kind = "table", offset = -1, values = [1.0, 2.0, 1.5], left = 1.0, right = 1.5 }
[window]
m = 10
[initial]
l0 = 0.0
m0 = 0.0
p = { kind = "table", offset = -1, values = [0.25, 0.5, 0.25] }
[integrator]
method = { kind = "rk4" }
dt_init = 1e-4
[simulate]
verdict = "converge"
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.c, 0.5);
        assert_eq!(cfg.simulate.verdict, Verdict::Converge);
        assert_eq!(cfg.initial_law().unwrap().get(0), 0.5);
        cfg.validate().unwrap();
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig { seed: 3, ..Default::default() };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg: RunConfig = toml::from_str("[model]\nc = -1.0\n").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let cfg: RunConfig = toml::from_str("[initial]\np = { kind = \"delta\", n = 40 }\n").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let cfg: RunConfig = toml::from_str("[particles]\ndt = 0.0\n").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}

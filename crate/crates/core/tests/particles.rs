use nlwalk::dynamics::{integrate, IntegratorConfig, SystemState};
use nlwalk::model::WindowRates;
use nlwalk::particles::{run, Ensemble};
use nlwalk::{LatticeMeasure, ModelParams, Window};

/// Signed `K_N(T) - K_N(0)` for each seed.
fn k_drifts(n: usize, seeds: std::ops::Range<u64>, t_end: f64, dt: f64) -> Vec<f64> {
    let p = ModelParams::benchmark();
    let p0 = LatticeMeasure::delta(Window::symmetric(25).unwrap(), 0).unwrap();
    seeds
        .map(|seed| {
            let ens = Ensemble::from_measure(&p0, n, 1.3, -0.4, seed).unwrap();
            let traj = run(&p, ens, t_end, dt, &[]).unwrap();
            traj.last().k_n - traj.samples[0].k_n
        })
        .collect()
}

fn mean_and_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `N Var(K_N(T) - K_N(0))` in the large-N limit: the integrated total jump
/// rate `int sum_n p_n (lambda_n + mu_n) dt` along the deterministic solution.
fn limiting_scaled_variance(t_end: f64) -> f64 {
    let p = ModelParams::benchmark();
    let win = Window::symmetric(25).unwrap();
    let st = SystemState::new(LatticeMeasure::delta(win, 0).unwrap(), 1.3, -0.4, 0.0).unwrap();
    let h = 0.01;
    let n = (t_end / h).round() as usize;
    let cfg = IntegratorConfig { t_samples: (1..=n).map(|i| i as f64 * h).collect(), ..Default::default() };
    let log = integrate(&p, &st, t_end, &cfg).unwrap();
    let rate: Vec<f64> = log
        .samples
        .iter()
        .map(|smp| {
            let s = &smp.state;
            let r = WindowRates::new(&p, win, s.l, s.m).unwrap();
            s.p.values().iter().zip(r.lambda.iter().zip(&r.mu)).map(|(q, (a, b))| q * (a + b)).sum()
        })
        .collect();
    rate.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
}

#[test]
fn empirical_k_drift_is_centred_noise_of_size_sqrt_t_over_n() {
    let t_end = 5.0;
    let v = limiting_scaled_variance(t_end);
    for n in [500, 2000] {
        let drifts = k_drifts(n, 0..20, t_end, 1e-3);
        let (mean, sd) = mean_and_sd(&drifts);
        assert!(mean.abs() < 4.0 * sd / 20f64.sqrt(), "N = {n}: {mean} vs sd {sd}");
        // s / sigma for 19 degrees of freedom stays in this range with
        // probability above 0.999.
        let ratio = sd / (v / n as f64).sqrt();
        assert!((0.5..1.6).contains(&ratio), "N = {n}: sd {sd} vs predicted {}", (v / n as f64).sqrt());
    }
}

#[test]
fn coarser_steps_keep_the_drift_centred() {
    let drifts = k_drifts(1000, 50..70, 2.0, 2e-3);
    let (mean, sd) = mean_and_sd(&drifts);
    assert!(mean.abs() < 4.0 * sd / 20f64.sqrt(), "{mean} vs sd {sd}");
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let p = ModelParams::benchmark();
    let p0 = LatticeMeasure::delta(Window::symmetric(25).unwrap(), 0).unwrap();
    let go = || run(&p, Ensemble::from_measure(&p0, 3000, 1.3, -0.4, 11).unwrap(), 1.0, 1e-3, &[0.5]).unwrap();
    let (a, b) = (go(), go());
    assert_eq!(a, b);
    assert_eq!(a.samples.len(), 3);
    assert_eq!(a.samples[1].t, 0.5);
}

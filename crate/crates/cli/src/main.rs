//! Command line runner for the nlwalk laboratory.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 invalid config, 3 model condition
//! violated, 4 numerical failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Context;
use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "nlwalk", version, about = "Nonlinear random walk laboratory")]
struct Cli {
    /// TOML run configuration; the benchmark setting when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Integrate the system and check conservation, convergence and monitors.
    Simulate,
    /// Fixed point for `s` (or for the initial condition's level set).
    FixedPoint,
    /// Solve `F(s) = K` for `s`.
    SolveS,
    /// Chapman-Kolmogorov, stochasticity and series checks of the kernels.
    KernelCheck,
    /// Sample walkers driven by the computed `(L, M)` path.
    SamplePaths,
    /// Mean-field particle simulation.
    Particles,
    /// Lyapunov monitors on a trajectory CSV.
    Diagnose,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out = Some(out);
    }
    config.validate()?;
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let ctx = Context { config, out };
    match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::FixedPoint => commands::fixed_point_cmd(&ctx),
        Command::SolveS => commands::solve_s(&ctx),
        Command::KernelCheck => commands::kernel_check(&ctx),
        Command::SamplePaths => commands::sample_paths_cmd(&ctx),
        Command::Particles => commands::particles_cmd(&ctx),
        Command::Diagnose => commands::diagnose(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nlwalk: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

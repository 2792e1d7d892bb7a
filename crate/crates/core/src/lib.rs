//! Laboratory for a nonlinear random walk on the integers whose jump rates
//! are driven by two mean-field parameters `L` and `M`.
//!
//! The walk jumps `n -> n+1` at rate `beta(n) e^{-c(n-L)}` and `n -> n-1` at
//! rate `beta(n-1) e^{c(n-M)}`, while `L` and `M` relax against the average
//! rates. The crate integrates the coupled system on a finite window, computes
//! the explicit family of fixed points and the conserved quantity
//! `K = L + M + sum n p_n`, monitors the relative-entropy Lyapunov function,
//! and cross-checks everything against transition kernels, a jump-path series,
//! a path sampler and an N-particle mean-field simulation.
//!
//! Module map:
//!
//! - [`model`]: parameters, `beta` profiles, jump rates, standing conditions.
//! - [`lattice`]: finite windows, measures and functions over the lattice.
//! - [`dynamics`]: the right-hand side, the integrator and trajectory logs.
//! - [`equilibrium`]: fixed points, partition function, `K -> s*` inversion.
//! - [`lyapunov`]: `Q`, relative entropy `H`, `W` and trajectory monitoring.
//! - [`kernel`]: generators, transition kernels, jump series, path sampler.
//! - [`particles`]: mean-field particle Monte Carlo.
//! - [`io`]: CSV and JSON encodings shared by the command line runner.

pub mod dynamics;
pub mod equilibrium;
mod error;
pub mod io;
pub mod kernel;
pub mod lattice;
pub mod lyapunov;
pub mod model;
mod numeric;
pub mod particles;

pub use error::{Error, Result};
pub use lattice::{LatticeFunction, LatticeMeasure, Window};
pub use model::{BetaProfile, ModelParams};

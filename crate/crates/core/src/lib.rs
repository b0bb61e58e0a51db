//! Solver library for constrained maximum-entropy dynamic games.
//!
//! The library finds local generalized Nash equilibria of discrete-time
//! multi-agent games by a DDP-style backward/forward sweep, handles
//! inequality constraints with an augmented Lagrangian, discovers multiple
//! equilibria ("modes") in parallel, composes them into a multimodal
//! stochastic policy with Bayesian inference over the latent mode, and
//! drives receding-horizon simulations on top of all of that.
//!
//! The main layers, bottom to top:
//!
//! - [`problem`]: game definitions (dynamics, per-agent costs, per-agent
//!   constraints), analytic derivatives with finite-difference audits, and
//!   the shipped scenario library (multi-agent collision avoidance,
//!   two-vehicle corridor racing, triple integrator).
//! - [`auglag`]: augmented-Lagrangian state, penalized cost assembly, dual
//!   ascent and the penalty schedule.
//! - [`solver`]: the per-mode equilibrium solver (quadratic Q-expansions,
//!   stacked feedback system, entropy-aware value recursion, line search)
//!   plus an iterated-best-response baseline.
//! - [`multimodal`]: parallel mode discovery with clustering, mode priors,
//!   the latent-mode posterior, the belief-averaged one-step ego solve and
//!   mixture-policy sampling.
//! - [`mpc`]: closed-loop receding-horizon sessions and episode simulation.
//! - [`config`] / [`cli`]: TOML run configs and the command-line entry
//!   points (`run`, `modes`, `check`).
//!
//! See the crate examples for one runnable program per capability.

pub mod auglag;
pub mod cli;
pub mod config;
pub mod mpc;
pub mod multimodal;
pub mod output;
pub mod problem;
pub mod solver;

mod log;

pub use log::{log_enabled, LogLevel};

/// Errors produced by problem construction, model evaluation and solves.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid problem or run configuration (bad dimensions, missing files,
    /// out-of-range parameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// A dynamics/cost/constraint model returned something unusable
    /// (non-finite values, failed derivative audit).
    #[error("model error: {0}")]
    Model(String),

    /// A solve failed (singular systems after maximum regularization,
    /// non-finite iterates, no converged mode).
    #[error("solver error: {0}")]
    Solver(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

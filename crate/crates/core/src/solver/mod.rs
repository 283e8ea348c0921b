//! Penalized and projected Euler schemes for the particle system, the
//! frozen-coefficient dyadic iteration, and solution diagnostics.

mod diagnostics;
mod engine;
mod grid;
mod iteration;
mod noise;
mod skorohod;

use thiserror::Error;

pub use diagnostics::{interior_margin, residual_report, ProbeFamily, SolutionDiagnostics};
pub use engine::{
    penalized_step_bound, run_lockstep, simulate, simulate_penalized, simulate_projected, simulate_replication,
    ControlSchedule, Scheme, Stepper, DIVERGENCE_BOUND,
};
pub use grid::{dyadic_snap, TimeGrid};
pub use iteration::{euler_iteration, EulerIterationReport, LevelSchedule};
pub use noise::{NoiseSource, ParticleNoise};
pub use skorohod::{oblique_skorohod_step, skorohod_into, PreparedOblique, StepError};

use crate::convex::ConvexError;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("explicit penalized scheme is unstable: h = {h:.3e} exceeds ε/(2 b_H) = {bound:.3e}")]
    Unstable { h: f64, bound: f64 },
    #[error("divergence at step {step} (replication {replication}, particle {particle})")]
    Divergence { step: usize, replication: usize, particle: usize },
    #[error("Skorohod step {step} failed: {source}")]
    Step { step: usize, source: StepError },
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

//! Simulation and verification toolkit for McKean–Vlasov stochastic
//! differential equations with oblique subgradient terms
//!
//! ```text
//! dx + H(x, μ) ∂Π(x) dt ∋ f(x, μ) dt + g(x, μ) dB,   μ = law(x)
//! ```
//!
//! constrained to the domain of a convex function `Π`.

pub mod convex;
pub mod linalg;
pub mod tol;
pub mod dynamics;
pub mod io;
pub mod measures;
pub mod path;
pub mod solver;
pub mod timedep;
pub mod control;
pub mod library;
pub mod stats;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Tolerance hierarchy shared by every module.

/// Plain floating-point arithmetic identities.
pub const ARITHMETIC: f64 = 1e-12;
/// Geometric identities: membership, projections, closed-form Skorohod steps.
pub const GEOMETRIC: f64 = 1e-10;
/// Composite identities built from several geometric operations.
pub const COMPOSITE: f64 = 1e-8;
/// Anything evaluated through an iterative or grid-based estimate.
pub const GRID: f64 = 1e-5;

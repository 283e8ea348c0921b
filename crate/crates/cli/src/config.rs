//! Experiment configuration documents.
//!
//! One JSON object per run, selected by `mode`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use oblique_mv::convex::{ConvexConstraint, Geometry, HalfSpace, SmoothConvex};
use oblique_mv::library::Params;
use oblique_mv::linalg::Matrix;
use oblique_mv::solver::Scheme;
use oblique_mv::timedep::CorrectionForm;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemRef {
    pub name: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub steps: usize,
    #[serde(default = "unit_horizon")]
    pub horizon: (f64, f64),
}

fn unit_horizon() -> (f64, f64) {
    (0.0, 1.0)
}

fn projected() -> Scheme {
    Scheme::Projected
}

fn default_ladder() -> Vec<usize> {
    vec![256, 512, 1024]
}

fn default_epsilons() -> Vec<f64> {
    vec![0.1, 0.01, 0.001]
}

/// Constraint selection for the property check.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConstraintSpec {
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Polytope { faces: Vec<Face> },
    /// `Π(x) = ½ xᵀQx` with `Q` given by rows.
    Quadratic { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Face {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl ConstraintSpec {
    pub fn build(&self) -> Result<ConvexConstraint, CliError> {
        let bad = |e: oblique_mv::convex::ConvexError| CliError::Config(format!("constraint: {e}"));
        let geometry = match self {
            ConstraintSpec::HalfSpace { normal, offset } => Geometry::half_space(normal.clone(), *offset).map_err(bad)?,
            ConstraintSpec::Box { lower, upper } => Geometry::boxed(lower.clone(), upper.clone()),
            ConstraintSpec::Ball { center, radius } => Geometry::ball(center.clone(), *radius),
            ConstraintSpec::Polytope { faces } => Geometry::polytope(
                faces.iter().map(|f| HalfSpace::new(f.normal.clone(), f.offset)).collect::<Result<_, _>>().map_err(bad)?,
            ),
            ConstraintSpec::Quadratic { matrix } => {
                let n = matrix.len();
                if n == 0 || matrix.iter().any(|r| r.len() != n) {
                    return Err(CliError::Config("constraint.matrix: rows must form a non-empty square".into()));
                }
                let q = Matrix::from_fn(n, n, |i, j| matrix[i][j]);
                return Ok(ConvexConstraint::smooth(SmoothConvex::quadratic(q).map_err(bad)?));
            }
        };
        ConvexConstraint::indicator(geometry).map_err(bad)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentConfig {
    /// Particle paths of a bundled system.
    Simulate {
        system: SystemRef,
        grid: GridSpec,
        #[serde(default = "default_particles")]
        particles: usize,
        #[serde(default = "one")]
        replications: usize,
        #[serde(default = "projected")]
        scheme: Scheme,
        /// Constant control value, required for control problems.
        #[serde(default)]
        control: Option<Vec<f64>>,
        /// Also compute solution residuals.
        #[serde(default)]
        diagnostics: bool,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    /// Penalization Cauchy rate over an ε ladder.
    Converge {
        system: SystemRef,
        grid: GridSpec,
        epsilons: Vec<f64>,
        #[serde(default = "default_particles")]
        particles: usize,
        #[serde(default = "default_replications")]
        replications: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    /// Value estimate with optional DPP, regularity and ε-rate probes.
    Control {
        problem: SystemRef,
        dt: f64,
        #[serde(default = "default_particles")]
        particles: usize,
        #[serde(default = "default_replications")]
        replications: usize,
        #[serde(default)]
        switches: usize,
        #[serde(default = "default_clusters")]
        clusters: usize,
        #[serde(default = "projected")]
        scheme: Scheme,
        #[serde(default)]
        dpp_tau: Option<f64>,
        #[serde(default)]
        regularity_scales: Option<Vec<f64>>,
        #[serde(default)]
        epsilons: Option<Vec<f64>>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    /// Sampled Lipschitz and ellipticity checks.
    Validate {
        system: SystemRef,
        #[serde(default = "default_pairs")]
        samples: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_atoms")]
        atoms: usize,
        #[serde(default = "unit_horizon")]
        horizon: (f64, f64),
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    /// Moving-constraint reduction against the direct solution.
    TransformDemo {
        problem: SystemRef,
        #[serde(default = "chain_rule")]
        form: CorrectionForm,
        #[serde(default = "default_ladder")]
        ladder: Vec<usize>,
        #[serde(default = "default_particles")]
        particles: usize,
        #[serde(default = "default_replications")]
        replications: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    /// Moreau–Yosida identities on random points.
    Properties {
        constraint: ConstraintSpec,
        #[serde(default = "default_epsilons")]
        epsilons: Vec<f64>,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        output: Option<PathBuf>,
    },
}

fn one() -> usize {
    1
}
fn default_particles() -> usize {
    64
}
fn default_replications() -> usize {
    8
}
fn default_clusters() -> usize {
    8
}
fn default_pairs() -> usize {
    2000
}
fn default_samples() -> usize {
    200
}
fn default_radius() -> f64 {
    3.0
}
fn default_atoms() -> usize {
    4
}
fn chain_rule() -> CorrectionForm {
    CorrectionForm::ChainRule
}

impl ExperimentConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn mode(&self) -> &'static str {
        match self {
            ExperimentConfig::Simulate { .. } => "simulate",
            ExperimentConfig::Converge { .. } => "converge",
            ExperimentConfig::Control { .. } => "control",
            ExperimentConfig::Validate { .. } => "validate",
            ExperimentConfig::TransformDemo { .. } => "transform-demo",
            ExperimentConfig::Properties { .. } => "properties",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Simulate { seed, .. }
            | ExperimentConfig::Converge { seed, .. }
            | ExperimentConfig::Control { seed, .. }
            | ExperimentConfig::Validate { seed, .. }
            | ExperimentConfig::TransformDemo { seed, .. }
            | ExperimentConfig::Properties { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            ExperimentConfig::Simulate { seed, .. }
            | ExperimentConfig::Converge { seed, .. }
            | ExperimentConfig::Control { seed, .. }
            | ExperimentConfig::Validate { seed, .. }
            | ExperimentConfig::TransformDemo { seed, .. }
            | ExperimentConfig::Properties { seed, .. } => *seed = value,
        }
    }

    pub fn output(&self) -> Option<&Path> {
        match self {
            ExperimentConfig::Simulate { output, .. }
            | ExperimentConfig::Converge { output, .. }
            | ExperimentConfig::Control { output, .. }
            | ExperimentConfig::Validate { output, .. }
            | ExperimentConfig::TransformDemo { output, .. }
            | ExperimentConfig::Properties { output, .. } => output.as_deref(),
        }
    }

    /// Structural checks that need no simulation.
    fn check(&self) -> Result<(), CliError> {
        let fail = |field: &str, msg: &str| Err(CliError::Config(format!("{field}: {msg}")));
        let positive = |field: &str, v: usize| if v == 0 { fail(field, "must be positive") } else { Ok(()) };
        let grid = |g: &GridSpec| {
            positive("grid.steps", g.steps)?;
            if !(g.horizon.0 < g.horizon.1 && g.horizon.0.is_finite() && g.horizon.1.is_finite()) {
                return fail("grid.horizon", "needs start < end");
            }
            Ok(())
        };
        let ladder = |field: &str, eps: &[f64]| {
            if eps.len() < 3 {
                return fail(field, "a rate fit needs at least 3 values");
            }
            if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                return fail(field, "values must be positive");
            }
            Ok(())
        };
        match self {
            ExperimentConfig::Simulate { grid: g, particles, replications, .. } => {
                grid(g)?;
                positive("particles", *particles)?;
                positive("replications", *replications)
            }
            ExperimentConfig::Converge { grid: g, epsilons, particles, replications, .. } => {
                grid(g)?;
                ladder("epsilons", epsilons)?;
                positive("particles", *particles)?;
                positive("replications", *replications)
            }
            ExperimentConfig::Control { dt, particles, replications, clusters, epsilons, regularity_scales, .. } => {
                if !(dt.is_finite() && *dt > 0.0) {
                    return fail("dt", "must be positive");
                }
                positive("particles", *particles)?;
                positive("replications", *replications)?;
                positive("clusters", *clusters)?;
                if let Some(e) = epsilons {
                    ladder("epsilons", e)?;
                }
                if let Some(s) = regularity_scales {
                    if s.is_empty() || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                        return fail("regularity_scales", "needs positive scales");
                    }
                }
                Ok(())
            }
            ExperimentConfig::Validate { samples, radius, atoms, .. } => {
                positive("samples", *samples)?;
                positive("atoms", *atoms)?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return fail("radius", "must be positive");
                }
                Ok(())
            }
            ExperimentConfig::TransformDemo { ladder: l, particles, replications, .. } => {
                if l.len() < 2 || l.windows(2).any(|w| w[0] >= w[1]) {
                    return fail("ladder", "needs at least two increasing step counts");
                }
                positive("particles", *particles)?;
                positive("replications", *replications)
            }
            ExperimentConfig::Properties { epsilons, samples, radius, .. } => {
                if epsilons.is_empty() || epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                    return fail("epsilons", "values must be positive");
                }
                positive("samples", *samples)?;
                if !(radius.is_finite() && *radius > 0.0) {
                    return fail("radius", "must be positive");
                }
                Ok(())
            }
        }
    }
}

//! Coefficient fields `f`, `g`, the oblique matrix field `H`, cost fields,
//! and sampled validators for the Lipschitz and ellipticity assumptions.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::convex::ConvexConstraint;
use crate::linalg::{inverse_spd, norm, symmetric_eigen, Matrix, SpectralError};
use crate::measures::{wasserstein2, EmpiricalMeasure};
use crate::tol;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DynamicsError {
    #[error("coefficients do not vanish at (0, δ₀): |f| = {drift:.3e}, |g| = {diffusion:.3e}")]
    Normalization { drift: f64, diffusion: f64 },
    #[error("cost does not vanish at the origin: {0:.3e}")]
    CostNormalization(f64),
    #[error("invalid field: {0}")]
    Config(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// `(t, x, μ, u, out)`; `u` is empty for uncontrolled fields.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &EmpiricalMeasure, &[f64], &mut [f64]) + Send + Sync>;
/// Writes the `m × d` diffusion matrix row-major into `out`.
pub type DiffusionFn = DriftFn;
pub type MatrixFn = Arc<dyn Fn(f64, &[f64], &EmpiricalMeasure, &mut Matrix) + Send + Sync>;
pub type TimeMatrixFn = Arc<dyn Fn(f64, &mut Matrix) + Send + Sync>;

/// Drift `f(x, μ, u)` and diffusion `g(x, μ, u)` with a declared Lipschitz
/// constant `L`.
#[derive(Clone)]
pub struct CoefficientField {
    state_dim: usize,
    noise_dim: usize,
    control_dim: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    lipschitz: f64,
    normalized: bool,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("control_dim", &self.control_dim)
            .field("lipschitz", &self.lipschitz)
            .field("normalized", &self.normalized)
            .finish_non_exhaustive()
    }
}

impl CoefficientField {
    /// Requires `f(0, δ₀, 0) = 0` and `g(0, δ₀, 0) = 0`.
    pub fn new(
        state_dim: usize,
        noise_dim: usize,
        control_dim: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
        lipschitz: f64,
    ) -> Result<Self, DynamicsError> {
        let field = Self::affine(state_dim, noise_dim, control_dim, drift, diffusion, lipschitz)?;
        field.check_normalization(&[vec![0.0; control_dim]])?;
        Ok(Self { normalized: true, ..field })
    }

    /// Like [`CoefficientField::new`] but without the normalization check,
    /// for fields with a constant part (additive noise, reduced systems).
    pub fn affine(
        state_dim: usize,
        noise_dim: usize,
        control_dim: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
        lipschitz: f64,
    ) -> Result<Self, DynamicsError> {
        if state_dim == 0 || noise_dim == 0 {
            return Err(DynamicsError::Config("state and noise dimensions must be positive".into()));
        }
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(DynamicsError::Config("declared Lipschitz constant must be positive".into()));
        }
        Ok(Self { state_dim, noise_dim, control_dim, drift, diffusion, lipschitz, normalized: false })
    }

    /// Checks `f(0, δ₀, u) = g(0, δ₀, u) = 0` for each listed control.
    pub fn check_normalization(&self, controls: &[Vec<f64>]) -> Result<(), DynamicsError> {
        let zero = vec![0.0; self.state_dim];
        let delta = EmpiricalMeasure::dirac(&zero);
        let mut f = vec![0.0; self.state_dim];
        let mut g = vec![0.0; self.state_dim * self.noise_dim];
        for u in controls {
            self.drift_into(0.0, &zero, &delta, u, &mut f);
            self.diffusion_into(0.0, &zero, &delta, u, &mut g);
            let (nf, ng) = (norm(&f), norm(&g));
            if nf > tol::ARITHMETIC || ng > tol::ARITHMETIC {
                return Err(DynamicsError::Normalization { drift: nf, diffusion: ng });
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn drift_into(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, u: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, mu, u, out)
    }

    pub fn diffusion_into(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, u: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, mu, u, out)
    }

    pub fn drift_fn(&self) -> DriftFn {
        self.drift.clone()
    }

    pub fn diffusion_fn(&self) -> DiffusionFn {
        self.diffusion.clone()
    }
}

#[derive(Clone)]
pub enum ObliqueDependence {
    Constant(Matrix),
    /// `H(t)` with optional analytic derivative `H′(t)`.
    Time { eval: TimeMatrixFn, derivative: Option<TimeMatrixFn> },
    /// `H(x, μ)`.
    State(MatrixFn),
}

/// Symmetric, uniformly elliptic matrix field with declared bounds
/// `a_H|u|² ≤ ⟨Hu, u⟩ ≤ b_H|u|²`.
#[derive(Clone)]
pub struct ObliqueField {
    dim: usize,
    dependence: ObliqueDependence,
    a_h: f64,
    b_h: f64,
}

impl fmt::Debug for ObliqueField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.dependence {
            ObliqueDependence::Constant(_) => "constant",
            ObliqueDependence::Time { .. } => "time",
            ObliqueDependence::State(_) => "state",
        };
        f.debug_struct("ObliqueField")
            .field("dim", &self.dim)
            .field("kind", &kind)
            .field("a_h", &self.a_h)
            .field("b_h", &self.b_h)
            .finish()
    }
}

impl ObliqueField {
    pub fn identity(dim: usize) -> Self {
        Self { dim, dependence: ObliqueDependence::Constant(Matrix::identity(dim)), a_h: 1.0, b_h: 1.0 }
    }

    /// Constant SPD matrix; the bounds are its extreme eigenvalues.
    pub fn constant(h: Matrix) -> Result<Self, DynamicsError> {
        let eig = crate::linalg::spd_eigen(&h)?;
        Ok(Self { dim: h.rows(), a_h: eig.min(), b_h: eig.max(), dependence: ObliqueDependence::Constant(h) })
    }

    pub fn time_dependent(
        dim: usize,
        eval: TimeMatrixFn,
        derivative: Option<TimeMatrixFn>,
        a_h: f64,
        b_h: f64,
    ) -> Result<Self, DynamicsError> {
        Self::checked(dim, ObliqueDependence::Time { eval, derivative }, a_h, b_h)
    }

    pub fn state_dependent(dim: usize, eval: MatrixFn, a_h: f64, b_h: f64) -> Result<Self, DynamicsError> {
        Self::checked(dim, ObliqueDependence::State(eval), a_h, b_h)
    }

    fn checked(dim: usize, dependence: ObliqueDependence, a_h: f64, b_h: f64) -> Result<Self, DynamicsError> {
        if dim == 0 || !(a_h > 0.0 && a_h <= b_h && b_h.is_finite()) {
            return Err(DynamicsError::Config("oblique bounds need 0 < a_H <= b_H < inf".into()));
        }
        Ok(Self { dim, dependence, a_h, b_h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn a_h(&self) -> f64 {
        self.a_h
    }

    pub fn b_h(&self) -> f64 {
        self.b_h
    }

    pub fn dependence(&self) -> &ObliqueDependence {
        &self.dependence
    }

    pub fn is_state_dependent(&self) -> bool {
        matches!(self.dependence, ObliqueDependence::State(_))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.dependence, ObliqueDependence::Constant(_))
    }

    pub fn eval_into(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut Matrix) {
        match &self.dependence {
            ObliqueDependence::Constant(h) => out.copy_from(h),
            ObliqueDependence::Time { eval, .. } => eval(t, out),
            ObliqueDependence::State(eval) => eval(t, x, mu, out),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        self.eval_into(t, x, mu, &mut out);
        out
    }

    /// `H(t)` for fields independent of the state.
    pub fn at_time(&self, t: f64) -> Option<Matrix> {
        let mut out = Matrix::zeros(self.dim, self.dim);
        match &self.dependence {
            ObliqueDependence::Constant(h) => Some(h.clone()),
            ObliqueDependence::Time { eval, .. } => {
                eval(t, &mut out);
                Some(out)
            }
            ObliqueDependence::State(_) => None,
        }
    }

    /// `H′(t)`: analytic when supplied, otherwise a central difference
    /// with step `fd_step` (flagged by the second return value).
    pub fn derivative_at(&self, t: f64, fd_step: f64) -> Option<(Matrix, bool)> {
        match &self.dependence {
            ObliqueDependence::Constant(_) => Some((Matrix::zeros(self.dim, self.dim), true)),
            ObliqueDependence::Time { eval, derivative } => {
                let mut out = Matrix::zeros(self.dim, self.dim);
                if let Some(d) = derivative {
                    d(t, &mut out);
                    return Some((out, true));
                }
                let mut lo = Matrix::zeros(self.dim, self.dim);
                eval(t + fd_step, &mut out);
                eval(t - fd_step, &mut lo);
                Some((out.sub(&lo).scaled(0.5 / fd_step), false))
            }
            ObliqueDependence::State(_) => None,
        }
    }
}

pub type RunningCostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Running cost `b(x, u)` and terminal cost `α(x)`.
#[derive(Clone)]
pub struct CostField {
    running: RunningCostFn,
    terminal: TerminalCostFn,
    lipschitz: f64,
}

impl fmt::Debug for CostField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostField").field("lipschitz", &self.lipschitz).finish_non_exhaustive()
    }
}

impl CostField {
    pub fn new(running: RunningCostFn, terminal: TerminalCostFn, lipschitz: f64) -> Self {
        Self { running, terminal, lipschitz }
    }

    pub fn zero() -> Self {
        Self::new(Arc::new(|_, _| 0.0), Arc::new(|_| 0.0), 1.0)
    }

    /// Checks `b(0, u) = α(0) = 0` for each listed control.
    pub fn check_normalization(&self, dim: usize, controls: &[Vec<f64>]) -> Result<(), DynamicsError> {
        let zero = vec![0.0; dim];
        let a = (self.terminal)(&zero);
        if a.abs() > tol::ARITHMETIC {
            return Err(DynamicsError::CostNormalization(a));
        }
        for u in controls {
            let b = (self.running)(&zero, u);
            if b.abs() > tol::ARITHMETIC {
                return Err(DynamicsError::CostNormalization(b));
            }
        }
        Ok(())
    }

    pub fn running(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.running)(x, u)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `(c·b, c·α)`.
    pub fn scaled(&self, c: f64) -> Self {
        let r = self.running.clone();
        let a = self.terminal.clone();
        Self::new(Arc::new(move |x, u| c * r(x, u)), Arc::new(move |x| c * a(x)), c.abs() * self.lipschitz)
    }
}

/// A complete uncontrolled or controlled system.
#[derive(Debug, Clone)]
pub struct System {
    pub name: String,
    pub coefficients: CoefficientField,
    pub oblique: ObliqueField,
    pub constraint: ConvexConstraint,
    pub initial: Vec<f64>,
}

impl System {
    pub fn new(
        name: impl Into<String>,
        coefficients: CoefficientField,
        oblique: ObliqueField,
        constraint: ConvexConstraint,
        initial: Vec<f64>,
    ) -> Result<Self, DynamicsError> {
        let m = coefficients.state_dim();
        if oblique.dim() != m || constraint.dim() != m || initial.len() != m {
            return Err(DynamicsError::Config(format!(
                "dimension mismatch: coefficients {m}, oblique {}, constraint {}, initial {}",
                oblique.dim(),
                constraint.dim(),
                initial.len()
            )));
        }
        if constraint.domain_distance(&initial) > tol::GEOMETRIC {
            return Err(DynamicsError::Config("initial state lies outside the constraint domain".into()));
        }
        Ok(Self { name: name.into(), coefficients, oblique, constraint, initial })
    }

    pub fn dim(&self) -> usize {
        self.coefficients.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.coefficients.noise_dim()
    }
}

/// Draws `(x, μ)` with `x` uniform in `[-radius, radius]^m` and `μ` a
/// uniform empirical measure of `atoms` such points.
#[derive(Debug, Clone)]
pub struct StateSampler {
    pub dim: usize,
    pub radius: f64,
    pub atoms: usize,
    pub seed: u64,
}

impl StateSampler {
    pub fn new(dim: usize, radius: f64) -> Self {
        Self { dim, radius, atoms: 4, seed: 0 }
    }

    fn point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dim).map(|_| rng.random_range(-self.radius..=self.radius)).collect()
    }

    fn measure(&self, rng: &mut ChaCha8Rng) -> EmpiricalMeasure {
        // Occasionally collapse to δ₀ so the normalization point is probed.
        if rng.random_bool(0.1) {
            return EmpiricalMeasure::dirac(&vec![0.0; self.dim]);
        }
        let atoms: Vec<f64> = (0..self.atoms).flat_map(|_| self.point(rng)).collect();
        EmpiricalMeasure::uniform(self.dim, atoms).expect("sampler produces non-empty measures")
    }

    /// Pairs `((x, μ), (y, ν))`: a third share `x`, a third share `μ`.
    pub fn pairs(&self, count: usize) -> Vec<((Vec<f64>, EmpiricalMeasure), (Vec<f64>, EmpiricalMeasure))> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..count)
            .map(|i| {
                let x = self.point(&mut rng);
                let mu = self.measure(&mut rng);
                let (y, nu) = match i % 3 {
                    0 => (x.clone(), self.measure(&mut rng)),
                    1 => (self.point(&mut rng), mu.clone()),
                    _ => (self.point(&mut rng), self.measure(&mut rng)),
                };
                ((x, mu), (y, nu))
            })
            .collect()
    }

    pub fn states(&self, count: usize) -> Vec<(Vec<f64>, EmpiricalMeasure)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        (0..count).map(|_| (self.point(&mut rng), self.measure(&mut rng))).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzViolation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub estimate: f64,
    pub declared: f64,
    pub pairs: usize,
    pub passed: bool,
    /// At most [`MAX_LISTED_VIOLATIONS`] worst offending pairs.
    pub violations: Vec<LipschitzViolation>,
}

pub const MAX_LISTED_VIOLATIONS: usize = 20;
pub const DEFAULT_LIPSCHITZ_PAIRS: usize = 10_000;

/// Empirical `max (|f(x,μ) − f(y,ν)| + |g(x,μ) − g(y,ν)|) / (|x − y| + W₂(μ, ν))`
/// over sampled pairs and the listed controls (one empty control when
/// uncontrolled).
pub fn validate_lipschitz(
    field: &CoefficientField,
    sampler: &StateSampler,
    pairs: usize,
    controls: &[Vec<f64>],
    t: f64,
) -> LipschitzReport {
    let m = field.state_dim();
    let md = m * field.noise_dim();
    let default_control = [vec![0.0; field.control_dim()]];
    let controls = if controls.is_empty() { &default_control[..] } else { controls };
    let mut estimate = 0.0_f64;
    let mut violations = Vec::new();
    let (mut f1, mut f2) = (vec![0.0; m], vec![0.0; m]);
    let (mut g1, mut g2) = (vec![0.0; md], vec![0.0; md]);
    for ((x, mu), (y, nu)) in sampler.pairs(pairs) {
        let denom = crate::linalg::dist(&x, &y) + wasserstein2(&mu, &nu).unwrap_or(f64::INFINITY);
        if denom <= tol::ARITHMETIC {
            continue;
        }
        for u in controls {
            field.drift_into(t, &x, &mu, u, &mut f1);
            field.drift_into(t, &y, &nu, u, &mut f2);
            field.diffusion_into(t, &x, &mu, u, &mut g1);
            field.diffusion_into(t, &y, &nu, u, &mut g2);
            let ratio = (crate::linalg::dist(&f1, &f2) + crate::linalg::dist(&g1, &g2)) / denom;
            estimate = estimate.max(ratio);
            if ratio > field.lipschitz() {
                violations.push(LipschitzViolation { x: x.clone(), y: y.clone(), ratio });
            }
        }
    }
    violations.sort_by(|a, b| b.ratio.total_cmp(&a.ratio));
    let passed = violations.is_empty();
    violations.truncate(MAX_LISTED_VIOLATIONS);
    LipschitzReport { estimate, declared: field.lipschitz(), pairs, passed, violations }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObliqueReport {
    /// Smallest and largest sampled Rayleigh quotients (extreme eigenvalues).
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub declared: (f64, f64),
    pub symmetry_residual: f64,
    /// Empirical Lipschitz ratios of `H` and `H^{-1}` (Frobenius norm)
    /// against `|x − y| + W₂(μ, ν)`; zero for state-free fields.
    pub lipschitz_h: f64,
    pub lipschitz_h_inv: f64,
    pub samples: usize,
    pub symmetric: bool,
    pub within_bounds: bool,
}

impl ObliqueReport {
    pub fn passed(&self) -> bool {
        self.symmetric && self.within_bounds
    }
}

/// Samples `H` over states (and times in `[t0, t1]` for time-dependent
/// fields) and reports the spectral band, symmetry, and Lipschitz ratios.
pub fn validate_oblique(field: &ObliqueField, sampler: &StateSampler, samples: usize, horizon: (f64, f64)) -> ObliqueReport {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sym = 0.0_f64;
    let mut lip = 0.0_f64;
    let mut lip_inv = 0.0_f64;
    let states = sampler.states(samples);
    let n = states.len().max(1);
    let time = |i: usize| horizon.0 + (horizon.1 - horizon.0) * i as f64 / (n.max(2) - 1) as f64;
    let mut prev: Option<(f64, Vec<f64>, EmpiricalMeasure, Matrix, Option<Matrix>)> = None;
    for (i, (x, mu)) in states.into_iter().enumerate() {
        let t = time(i);
        let h = field.eval(t, &x, &mu);
        let scale = 1.0 + h.max_abs();
        sym = sym.max(h.symmetry_residual() / scale);
        let inv = match symmetric_eigen(&h.symmetrized()) {
            Ok(e) => {
                lo = lo.min(e.min());
                hi = hi.max(e.max());
                inverse_spd(&h.symmetrized()).ok()
            }
            Err(_) => {
                lo = f64::NAN;
                None
            }
        };
        if let Some((pt, px, pmu, ph, pinv)) = &prev {
            let denom = if field.is_state_dependent() {
                crate::linalg::dist(&x, px) + wasserstein2(&mu, pmu).unwrap_or(f64::INFINITY)
            } else {
                (t - pt).abs()
            };
            if denom > tol::ARITHMETIC {
                lip = lip.max(h.sub(ph).frobenius() / denom);
                if let (Some(a), Some(b)) = (&inv, pinv) {
                    lip_inv = lip_inv.max(a.sub(b).frobenius() / denom);
                }
            }
        }
        prev = Some((t, x, mu, h, inv));
    }
    let symmetric = sym <= tol::GEOMETRIC;
    let within_bounds =
        lo >= field.a_h() * (1.0 - tol::GEOMETRIC) && hi <= field.b_h() * (1.0 + tol::GEOMETRIC);
    ObliqueReport {
        min_eigenvalue: lo,
        max_eigenvalue: hi,
        declared: (field.a_h(), field.b_h()),
        symmetry_residual: sym,
        lipschitz_h: lip,
        lipschitz_h_inv: lip_inv,
        samples,
        symmetric,
        within_bounds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_field(f: fn(f64) -> f64, lipschitz: f64) -> CoefficientField {
        CoefficientField::new(
            1,
            1,
            0,
            Arc::new(move |_, x: &[f64], _: &EmpiricalMeasure, _: &[f64], out: &mut [f64]| out[0] = f(x[0])),
            Arc::new(|_, _: &[f64], _: &EmpiricalMeasure, _: &[f64], out: &mut [f64]| out[0] = 0.0),
            lipschitz,
        )
        .unwrap()
    }

    #[test]
    fn identity_drift_passes() {
        let r = validate_lipschitz(&scalar_field(|x| x, 1.0), &StateSampler::new(1, 10.0), 2000, &[], 0.0);
        assert!(r.passed && r.estimate <= 1.0 + 1e-12, "{r:?}");
    }

    #[test]
    fn square_drift_is_flagged() {
        let r = validate_lipschitz(&scalar_field(|x| x * x, 1.0), &StateSampler::new(1, 10.0), 2000, &[], 0.0);
        assert!(!r.passed);
        assert!(r.estimate > 5.0);
        assert!(r.violations.len() <= MAX_LISTED_VIOLATIONS);
        assert!(r.violations.windows(2).all(|w| w[0].ratio >= w[1].ratio));
    }

    #[test]
    fn normalization_enforced() {
        let res = CoefficientField::new(
            1,
            1,
            0,
            Arc::new(|_, _: &[f64], _: &EmpiricalMeasure, _: &[f64], out: &mut [f64]| out[0] = 1.0),
            Arc::new(|_, _: &[f64], _: &EmpiricalMeasure, _: &[f64], out: &mut [f64]| out[0] = 0.0),
            1.0,
        );
        assert!(matches!(res, Err(DynamicsError::Normalization { .. })));
    }

    #[test]
    fn identity_oblique_band() {
        let r = validate_oblique(&ObliqueField::identity(3), &StateSampler::new(3, 1.0), 50, (0.0, 1.0));
        assert_eq!((r.min_eigenvalue, r.max_eigenvalue), (1.0, 1.0));
        assert!(r.passed());
    }

    #[test]
    fn asymmetric_oblique_flagged() {
        let h = ObliqueField::state_dependent(
            2,
            Arc::new(|_, _: &[f64], _: &EmpiricalMeasure, out: &mut Matrix| {
                *out = Matrix::from_rows(&[&[2.0, 0.5], &[0.0, 2.0]]);
            }),
            1.0,
            3.0,
        )
        .unwrap();
        let r = validate_oblique(&h, &StateSampler::new(2, 1.0), 10, (0.0, 1.0));
        assert!(!r.symmetric && !r.passed());
    }

    #[test]
    fn finite_difference_derivative_is_flagged() {
        let h = ObliqueField::time_dependent(
            1,
            Arc::new(|t, out: &mut Matrix| out[(0, 0)] = 1.0 + t * t),
            None,
            1.0,
            2.0,
        )
        .unwrap();
        let (d, analytic) = h.derivative_at(0.5, 1e-6).unwrap();
        assert!(!analytic);
        assert!((d[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cost_scaling_and_normalization() {
        let c = CostField::new(Arc::new(|x, _| x[0].abs()), Arc::new(|x| x[0].abs()), 1.0);
        assert!(c.check_normalization(1, &[vec![1.0]]).is_ok());
        let d = c.scaled(2.0);
        assert_eq!(d.running(&[-1.5], &[]), 3.0);
        let bad = CostField::new(Arc::new(|_, _| 1.0), Arc::new(|_| 0.0), 1.0);
        assert!(bad.check_normalization(1, &[vec![0.0]]).is_err());
    }
}

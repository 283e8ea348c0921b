//! Convex constraints `Π`, projections, and Moreau–Yosida regularization.
//!
//! `Π_ε(x) = inf_z |z − x|²/(2ε) + Π(z)`, `J_ε x = x − ε∇Π_ε(x)`.

mod geometry;
mod properties;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use geometry::{Geometry, HalfSpace, DYKSTRA_MAX_SWEEPS, DYKSTRA_STOP};
pub(crate) use geometry::dykstra;
pub use properties::{
    check_yosida_properties, interior_constants, normal_cone_residual, InteriorCertificate, InteriorConstants,
    PropertyReport, PROPERTY_NAMES,
};

use crate::linalg::{cholesky, cholesky_solve, dot, Matrix};
use crate::tol;

/// Iteration cap for proximal steps on user-supplied smooth functions.
const PROX_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConvexError {
    #[error("invalid constraint: {0}")]
    Config(String),
    #[error("empty or numerically infeasible intersection (max face violation {violation:.3e})")]
    Infeasible { violation: f64 },
    #[error("epsilon must be positive and finite, got {0}")]
    Domain(f64),
    #[error("operation needs an indicator constraint")]
    NotIndicator,
    #[error("interior certificate fails: ball of radius {radius} around anchor reaches {depth:.6} from the boundary")]
    Certificate { radius: f64, depth: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("proximal iteration did not converge (last step {step:.3e})")]
    NoConvergence { step: f64 },
}

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum SmoothKind {
    /// `φ(x) = ½ xᵀQx`, Q symmetric positive semidefinite.
    Quadratic(Matrix),
    Custom { value: ValueFn, gradient: GradientFn, smoothness: f64 },
}

/// Differentiable convex function, shifted so that its minimum value at the
/// origin is zero.
#[derive(Clone)]
pub struct SmoothConvex {
    dim: usize,
    kind: SmoothKind,
    shift: f64,
}

impl fmt::Debug for SmoothConvex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            SmoothKind::Quadratic(q) => f.debug_struct("SmoothConvex").field("quadratic", q).finish(),
            SmoothKind::Custom { smoothness, .. } => f
                .debug_struct("SmoothConvex")
                .field("dim", &self.dim)
                .field("smoothness", smoothness)
                .finish_non_exhaustive(),
        }
    }
}

impl SmoothConvex {
    pub fn quadratic(q: Matrix) -> Result<Self, ConvexError> {
        if !q.is_square() || q.rows() == 0 || !q.is_finite() {
            return Err(ConvexError::Config("quadratic form needs a finite square matrix".into()));
        }
        if q.symmetry_residual() > tol::GEOMETRIC * (1.0 + q.max_abs()) {
            return Err(ConvexError::Config("quadratic form matrix is not symmetric".into()));
        }
        let eig = crate::linalg::symmetric_eigen(&q).map_err(|e| ConvexError::Config(e.to_string()))?;
        if eig.min() < -tol::ARITHMETIC * (1.0 + eig.max().abs()) {
            return Err(ConvexError::Config(format!(
                "quadratic form is not convex (eigenvalue {:.3e})",
                eig.min()
            )));
        }
        Ok(Self { dim: q.rows(), kind: SmoothKind::Quadratic(q.symmetrized()), shift: 0.0 })
    }

    /// User-supplied convex `φ` with `β`-Lipschitz gradient. The origin must
    /// be a minimizer; the value is shifted so that `φ(0) = 0`.
    pub fn custom(dim: usize, value: ValueFn, gradient: GradientFn, smoothness: f64) -> Result<Self, ConvexError> {
        if dim == 0 || !(smoothness.is_finite() && smoothness >= 0.0) {
            return Err(ConvexError::Config("smooth function needs dim > 0 and finite smoothness".into()));
        }
        let zero = vec![0.0; dim];
        let mut g = vec![0.0; dim];
        gradient(&zero, &mut g);
        if crate::linalg::norm(&g) > tol::GEOMETRIC {
            return Err(ConvexError::Config("origin is not a minimizer (gradient at 0 is non-zero)".into()));
        }
        let shift = value(&zero);
        if !shift.is_finite() {
            return Err(ConvexError::Config("smooth function is not finite at the origin".into()));
        }
        Ok(Self { dim, kind: SmoothKind::Custom { value, gradient, smoothness }, shift })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.kind, SmoothKind::Quadratic(_))
    }

    pub fn smoothness(&self) -> f64 {
        match &self.kind {
            SmoothKind::Quadratic(q) => crate::linalg::symmetric_eigen(q).map(|e| e.max()).unwrap_or(f64::INFINITY),
            SmoothKind::Custom { smoothness, .. } => *smoothness,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            SmoothKind::Quadratic(q) => 0.5 * q.quadratic_form(x),
            SmoothKind::Custom { value, .. } => value(x) - self.shift,
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            SmoothKind::Quadratic(q) => q.mul_vec_into(x, out),
            SmoothKind::Custom { gradient, .. } => gradient(x, out),
        }
    }

    /// `argmin_z |z − x|²/(2ε) + φ(z)` over `z ∈ set` (whole space if `None`).
    fn prox_into(&self, eps: f64, x: &[f64], set: Option<&Geometry>, out: &mut [f64]) -> Result<(), ConvexError> {
        if let (SmoothKind::Quadratic(q), None) = (&self.kind, set) {
            let mut a = q.scaled(eps);
            for i in 0..self.dim {
                a[(i, i)] += 1.0;
            }
            let l = cholesky(&a).map_err(|e| ConvexError::Config(e.to_string()))?;
            cholesky_solve(&l, x, out);
            return Ok(());
        }
        // (Projected) gradient descent on a (1/ε)-strongly convex objective
        // with step 1/(1/ε + β): contraction factor εβ/(1 + εβ).
        let beta = self.smoothness();
        let step = 1.0 / (1.0 / eps + beta);
        let m = self.dim;
        let mut z = x.to_vec();
        if let Some(g) = set {
            g.project_into(x, &mut z)?;
        }
        let mut grad = vec![0.0; m];
        let mut trial = vec![0.0; m];
        let mut last = f64::INFINITY;
        for _ in 0..PROX_MAX_ITERS {
            self.gradient_into(&z, &mut grad);
            for i in 0..m {
                trial[i] = z[i] - step * ((z[i] - x[i]) / eps + grad[i]);
            }
            if let Some(g) = set {
                let free = trial.clone();
                g.project_into(&free, &mut trial)?;
            }
            last = crate::linalg::dist(&trial, &z);
            std::mem::swap(&mut z, &mut trial);
            if last <= 1e-15 * (1.0 + crate::linalg::norm(&z)) {
                out.copy_from_slice(&z);
                return Ok(());
            }
        }
        Err(ConvexError::NoConvergence { step: last })
    }
}

/// Proper lower semicontinuous convex `Π` with `Π(x) ≥ Π(0) = 0`.
#[derive(Debug, Clone)]
pub enum ConvexConstraint {
    Indicator(Geometry),
    Smooth(SmoothConvex),
    /// Smooth part restricted to a set: `φ + I_K`.
    Sum { set: Geometry, smooth: SmoothConvex },
}

impl ConvexConstraint {
    pub fn indicator(geometry: Geometry) -> Result<Self, ConvexError> {
        geometry.validate()?;
        Ok(ConvexConstraint::Indicator(geometry))
    }

    pub fn smooth(smooth: SmoothConvex) -> Self {
        ConvexConstraint::Smooth(smooth)
    }

    pub fn sum(set: Geometry, smooth: SmoothConvex) -> Result<Self, ConvexError> {
        set.validate()?;
        if set.dim() != smooth.dim() {
            return Err(ConvexError::Dimension { expected: set.dim(), got: smooth.dim() });
        }
        Ok(ConvexConstraint::Sum { set, smooth })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexConstraint::Indicator(g) => g.dim(),
            ConvexConstraint::Smooth(s) => s.dim(),
            ConvexConstraint::Sum { set, .. } => set.dim(),
        }
    }

    pub fn geometry(&self) -> Option<&Geometry> {
        match self {
            ConvexConstraint::Indicator(g) | ConvexConstraint::Sum { set: g, .. } => Some(g),
            ConvexConstraint::Smooth(_) => None,
        }
    }

    pub fn is_indicator(&self) -> bool {
        matches!(self, ConvexConstraint::Indicator(_))
    }

    /// Closed-form resolvents are checked at the tight tolerance; iterative
    /// ones at the grid tolerance.
    pub fn is_closed_form(&self) -> bool {
        match self {
            ConvexConstraint::Indicator(g) => !matches!(g, Geometry::Polytope { .. }),
            ConvexConstraint::Smooth(s) => s.is_closed_form(),
            ConvexConstraint::Sum { .. } => false,
        }
    }

    /// `Π(x)`; `+∞` outside the domain.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ConvexConstraint::Indicator(g) => {
                if g.contains(x, tol::GEOMETRIC) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ConvexConstraint::Smooth(s) => s.value(x),
            ConvexConstraint::Sum { set, smooth } => {
                if set.contains(x, tol::GEOMETRIC) {
                    smooth.value(x)
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Distance from `x` to `D(∂Π)`.
    pub fn domain_distance(&self, x: &[f64]) -> f64 {
        self.geometry().map_or(0.0, |g| g.distance(x))
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, ConvexError> {
        let g = match self {
            ConvexConstraint::Indicator(g) => g,
            _ => return Err(ConvexError::NotIndicator),
        };
        let mut out = vec![0.0; x.len()];
        g.project_into(x, &mut out)?;
        Ok(out)
    }

    pub fn resolvent_into(&self, eps: f64, x: &[f64], out: &mut [f64]) -> Result<(), ConvexError> {
        check_eps(eps)?;
        match self {
            ConvexConstraint::Indicator(g) => g.project_into(x, out),
            ConvexConstraint::Smooth(s) => s.prox_into(eps, x, None, out),
            ConvexConstraint::Sum { set, smooth } => smooth.prox_into(eps, x, Some(set), out),
        }
    }

    pub fn resolvent(&self, eps: f64, x: &[f64]) -> Result<Vec<f64>, ConvexError> {
        let mut out = vec![0.0; x.len()];
        self.resolvent_into(eps, x, &mut out)?;
        Ok(out)
    }

    /// `∇Π_ε(x) = (x − J_ε x)/ε`.
    pub fn yosida_gradient_into(&self, eps: f64, x: &[f64], out: &mut [f64]) -> Result<(), ConvexError> {
        // The indicator case is on the hot path of the penalized scheme.
        if let ConvexConstraint::Indicator(g) = self {
            check_eps(eps)?;
            if let Geometry::HalfSpace(h) = g {
                let v = h.excess(x);
                if v <= 0.0 {
                    out.fill(0.0);
                } else {
                    let lam = v / (dot(&h.normal, &h.normal) * eps);
                    for (o, a) in out.iter_mut().zip(&h.normal) {
                        *o = lam * a;
                    }
                }
                return Ok(());
            }
        }
        self.resolvent_into(eps, x, out)?;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = (xi - *o) / eps;
        }
        Ok(())
    }

    pub fn yosida_gradient(&self, eps: f64, x: &[f64]) -> Result<Vec<f64>, ConvexError> {
        let mut out = vec![0.0; x.len()];
        self.yosida_gradient_into(eps, x, &mut out)?;
        Ok(out)
    }

    /// `Π_ε(x) = |x − J_ε x|²/(2ε) + Π(J_ε x)`.
    pub fn yosida_value(&self, eps: f64, x: &[f64]) -> Result<f64, ConvexError> {
        let j = self.resolvent(eps, x)?;
        let d2 = crate::linalg::dist_sq(x, &j);
        let base = match self {
            ConvexConstraint::Indicator(_) => 0.0,
            ConvexConstraint::Smooth(s) => s.value(&j),
            ConvexConstraint::Sum { smooth, .. } => smooth.value(&j),
        };
        Ok(d2 / (2.0 * eps) + base)
    }
}

fn check_eps(eps: f64) -> Result<(), ConvexError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(ConvexError::Domain(eps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_line() -> ConvexConstraint {
        ConvexConstraint::indicator(Geometry::half_line()).unwrap()
    }

    fn half_square() -> ConvexConstraint {
        ConvexConstraint::smooth(SmoothConvex::quadratic(Matrix::identity(1)).unwrap())
    }

    /// Brute-force `inf_z |z − x|²/(2ε) + Π(z)` over a 1D grid.
    fn grid_moreau(pi: impl Fn(f64) -> f64, eps: f64, x: f64, lo: f64, hi: f64, step: f64) -> f64 {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n)
            .map(|i| lo + i as f64 * step)
            .map(|z| (z - x).powi(2) / (2.0 * eps) + pi(z))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn indicator_half_line_against_grid() {
        let c = half_line();
        let v = c.yosida_value(0.5, &[-1.0]).unwrap();
        let oracle = grid_moreau(|z| if z >= 0.0 { 0.0 } else { f64::INFINITY }, 0.5, -1.0, -3.0, 3.0, 1e-4);
        assert!((v - oracle).abs() <= 2e-4, "{v} vs {oracle}");
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(c.yosida_gradient(0.5, &[-1.0]).unwrap(), vec![-2.0]);
        assert_eq!(c.resolvent(0.5, &[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(c.yosida_value(0.5, &[2.0]).unwrap(), 0.0);
        assert_eq!(c.yosida_gradient(0.5, &[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn quadratic_against_analytic() {
        let c = half_square();
        let eps = 1.0;
        let x = 2.0;
        let analytic = x * x / (2.0 * (1.0 + eps));
        assert!((c.yosida_value(eps, &[x]).unwrap() - analytic).abs() < 1e-12);
        assert!((c.yosida_gradient(eps, &[x]).unwrap()[0] - x / (1.0 + eps)).abs() < 1e-12);
        assert!((c.resolvent(eps, &[x]).unwrap()[0] - 1.0).abs() < 1e-12);
        let oracle = grid_moreau(|z| 0.5 * z * z, eps, x, -3.0, 3.0, 1e-4);
        assert!((c.yosida_value(eps, &[x]).unwrap() - oracle).abs() <= 2e-4);
    }

    #[test]
    fn custom_smooth_matches_quadratic() {
        let value: ValueFn = Arc::new(|x: &[f64]| 0.5 * (2.0 * x[0] * x[0] + x[1] * x[1]) + 3.0);
        let gradient: GradientFn = Arc::new(|x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            g[1] = x[1];
        });
        let custom = ConvexConstraint::smooth(SmoothConvex::custom(2, value, gradient, 2.0).unwrap());
        let quad = ConvexConstraint::smooth(SmoothConvex::quadratic(Matrix::from_diag(&[2.0, 1.0])).unwrap());
        assert_eq!(custom.value(&[0.0, 0.0]), 0.0);
        for x in [[1.0, -2.0], [0.3, 0.7], [-5.0, 4.0]] {
            for eps in [0.01, 0.5, 3.0] {
                let a = custom.yosida_value(eps, &x).unwrap();
                let b = quad.yosida_value(eps, &x).unwrap();
                assert!((a - b).abs() < 1e-10, "{x:?} {eps}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn custom_rejects_nonminimal_origin() {
        let value: ValueFn = Arc::new(|x: &[f64]| (x[0] - 1.0).powi(2));
        let gradient: GradientFn = Arc::new(|x: &[f64], g: &mut [f64]| g[0] = 2.0 * (x[0] - 1.0));
        assert!(SmoothConvex::custom(1, value, gradient, 2.0).is_err());
    }

    #[test]
    fn sum_restricts_prox_to_set() {
        let c = ConvexConstraint::sum(
            Geometry::boxed(vec![-1.0], vec![1.0]),
            SmoothConvex::quadratic(Matrix::identity(1)).unwrap(),
        )
        .unwrap();
        // Unconstrained prox of 10 at eps = 1 is 5, clipped to the box.
        let j = c.resolvent(1.0, &[10.0]).unwrap();
        assert!((j[0] - 1.0).abs() < 1e-10);
        let j = c.resolvent(1.0, &[1.0]).unwrap();
        assert!((j[0] - 0.5).abs() < 1e-10);
        let brute = grid_moreau(|z| if z.abs() <= 1.0 { 0.5 * z * z } else { f64::INFINITY }, 1.0, 10.0, -3.0, 3.0, 1e-4);
        assert!((c.yosida_value(1.0, &[10.0]).unwrap() - brute).abs() <= 2e-4);
    }

    #[test]
    fn domain_errors() {
        let c = half_line();
        assert_eq!(c.yosida_value(0.0, &[1.0]), Err(ConvexError::Domain(0.0)));
        assert!(c.yosida_gradient(-1.0, &[1.0]).is_err());
        assert!(half_square().project(&[1.0]).is_err());
    }

    #[test]
    fn two_dimensional_ball_against_grid() {
        let c = ConvexConstraint::indicator(Geometry::ball(vec![0.0, 0.0], 1.0)).unwrap();
        let x = [1.3, -0.9];
        let eps = 0.2;
        let step = 2e-3;
        let mut best = f64::INFINITY;
        let n = (2.0 / step) as i64;
        for i in -n / 2..=n / 2 {
            for j in -n / 2..=n / 2 {
                let z = [i as f64 * step, j as f64 * step];
                if z[0] * z[0] + z[1] * z[1] <= 1.0 {
                    best = best.min(crate::linalg::dist_sq(&z, &x) / (2.0 * eps));
                }
            }
        }
        let v = c.yosida_value(eps, &x).unwrap();
        // The grid can only overestimate; the gap is bounded by the grid step
        // times the Lipschitz constant of the objective near the minimizer.
        assert!(v <= best + 1e-12 && best - v <= 2.0 * step * (crate::linalg::norm(&x) / eps), "{v} vs {best}");
    }
}

//! Problems constrained to a moving set `H(t)Ξ`, their reduction to an
//! oblique problem on the fixed set `Ξ` via `x̄ = H^{-1}(t)x`, and a
//! numerical equivalence check against a direct moving-interval solver.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{ConvexConstraint, Geometry};
use crate::dynamics::{validate_oblique, CoefficientField, DynamicsError, ObliqueField, StateSampler, System};
use crate::linalg::{inverse_spd, symmetric_eigen, Matrix, SpectralError};
use crate::measures::EmpiricalMeasure;
use crate::path::{ConstrainedPath, Ensemble};
use crate::solver::{simulate_projected, NoiseSource, ParticleNoise, SolverError, TimeGrid, DIVERGENCE_BOUND};
use crate::tol;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TimeDepError {
    #[error("invalid moving-constraint problem: {0}")]
    Config(String),
    #[error("H(t) fails ellipticity at t = {t}: eigenvalues in [{min:.3e}, {max:.3e}], declared [{a_h:.3e}, {b_h:.3e}]")]
    Reduction { t: f64, min: f64, max: f64, a_h: f64, b_h: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Named families of symmetric matrix paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixFamily {
    /// `H(t) = A + tB` with symmetric `A`, `B` given by rows.
    Affine { base: Vec<Vec<f64>>, slope: Vec<Vec<f64>> },
    /// `H(t) = c·e^{rt}·I`.
    Exponential { dim: usize, scale: f64, rate: f64 },
    /// `H(t) = R(ωt) diag(a₁, a₂) R(ωt)ᵀ` in the plane.
    RotationScaled { axes: [f64; 2], angular_speed: f64 },
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<Matrix, TimeDepError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(TimeDepError::Config("matrix rows must form a non-empty square".into()));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rotation_scaled(axes: [f64; 2], angle: f64) -> Matrix {
    let (s, c) = angle.sin_cos();
    let [a, b] = axes;
    Matrix::from_rows(&[&[a * c * c + b * s * s, (a - b) * s * c], &[(a - b) * s * c, a * s * s + b * c * c]])
}

impl MatrixFamily {
    /// Builds the field with analytic derivative and ellipticity bounds
    /// valid on `horizon`.
    pub fn field(&self, horizon: (f64, f64)) -> Result<ObliqueField, TimeDepError> {
        let (t0, t1) = horizon;
        match self {
            MatrixFamily::Affine { base, slope } => {
                let a = rows_to_matrix(base)?;
                let b = rows_to_matrix(slope)?;
                if a.rows() != b.rows() {
                    return Err(TimeDepError::Config("affine base and slope differ in size".into()));
                }
                if a.symmetry_residual() > 0.0 || b.symmetry_residual() > 0.0 {
                    return Err(TimeDepError::Config("affine base and slope must be symmetric".into()));
                }
                // λ_min is concave and λ_max convex along an affine path.
                let e0 = symmetric_eigen(&a.add(&b.scaled(t0)))?;
                let e1 = symmetric_eigen(&a.add(&b.scaled(t1)))?;
                let (lo, hi) = (e0.min().min(e1.min()), e0.max().max(e1.max()));
                if lo <= 0.0 {
                    return Err(TimeDepError::Reduction { t: if e0.min() <= 0.0 { t0 } else { t1 }, min: lo, max: hi, a_h: lo, b_h: hi });
                }
                let (a2, b2) = (a.clone(), b.clone());
                let eval = Arc::new(move |t: f64, out: &mut Matrix| {
                    for i in 0..a2.rows() {
                        for j in 0..a2.cols() {
                            out[(i, j)] = a2[(i, j)] + t * b2[(i, j)];
                        }
                    }
                });
                let deriv = Arc::new(move |_t: f64, out: &mut Matrix| out.copy_from(&b));
                Ok(ObliqueField::time_dependent(a.rows(), eval, Some(deriv), lo, hi)?)
            }
            MatrixFamily::Exponential { dim, scale, rate } => {
                let (dim, scale, rate) = (*dim, *scale, *rate);
                if dim == 0 || !(scale > 0.0) || !rate.is_finite() {
                    return Err(TimeDepError::Config("exponential family needs dim > 0, scale > 0".into()));
                }
                let (v0, v1) = (scale * (rate * t0).exp(), scale * (rate * t1).exp());
                let eval = Arc::new(move |t: f64, out: &mut Matrix| {
                    out.copy_from(&Matrix::identity(dim).scaled(scale * (rate * t).exp()))
                });
                let deriv = Arc::new(move |t: f64, out: &mut Matrix| {
                    out.copy_from(&Matrix::identity(dim).scaled(rate * scale * (rate * t).exp()))
                });
                Ok(ObliqueField::time_dependent(dim, eval, Some(deriv), v0.min(v1), v0.max(v1))?)
            }
            MatrixFamily::RotationScaled { axes, angular_speed } => {
                let (axes, w) = (*axes, *angular_speed);
                if !(axes[0] > 0.0 && axes[1] > 0.0) || !w.is_finite() {
                    return Err(TimeDepError::Config("rotation-scaled family needs positive axes".into()));
                }
                let eval = Arc::new(move |t: f64, out: &mut Matrix| out.copy_from(&rotation_scaled(axes, w * t)));
                let deriv = Arc::new(move |t: f64, out: &mut Matrix| {
                    let (s, c) = (w * t).sin_cos();
                    let (a, b) = (axes[0], axes[1]);
                    let d = (a - b) * w;
                    out.copy_from(&Matrix::from_rows(&[&[-2.0 * d * s * c, d * (c * c - s * s)], &[d * (c * c - s * s), 2.0 * d * s * c]]));
                });
                Ok(ObliqueField::time_dependent(2, eval, Some(deriv), axes[0].min(axes[1]), axes[0].max(axes[1]))?)
            }
        }
    }
}

/// Drift/diffusion transformation applied by the reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionForm {
    /// `f̄ = H^{-1}(f + H′x̄)`, `ḡ = H^{-1}(g + H′x̄)` (added to every column).
    Additive,
    /// `f̄ = H^{-1}(f + H′x̄)`, `ḡ = H^{-1}g`.
    DriftOnly,
    /// Itô's formula for `x̄ = H^{-1}x`: `f̄ = H^{-1}(f − H′x̄)`, `ḡ = H^{-1}g`.
    #[default]
    ChainRule,
}

impl CorrectionForm {
    fn drift_sign(self) -> f64 {
        match self {
            CorrectionForm::ChainRule => -1.0,
            _ => 1.0,
        }
    }
}

/// `dx + ∂I_{H(t)Ξ}(x)dt ∋ f(x, μ̄)dt + g(x, μ̄)dB` on `[t₀, T]`, where
/// `μ̄` is the law of `H^{-1}(t)x`.
#[derive(Debug, Clone)]
pub struct MovingConstraintProblem {
    pub base: ConvexConstraint,
    pub path: ObliqueField,
    pub coefficients: CoefficientField,
    pub initial: Vec<f64>,
    pub horizon: (f64, f64),
}

const ELLIPTICITY_SAMPLES: usize = 101;

impl MovingConstraintProblem {
    pub fn new(
        base: ConvexConstraint,
        path: ObliqueField,
        coefficients: CoefficientField,
        initial: Vec<f64>,
        horizon: (f64, f64),
    ) -> Result<Self, TimeDepError> {
        let m = coefficients.state_dim();
        if !base.is_indicator() {
            return Err(TimeDepError::Config("the base set must be an indicator constraint".into()));
        }
        if path.is_state_dependent() {
            return Err(TimeDepError::Config("the matrix path may depend on time only".into()));
        }
        if base.dim() != m || path.dim() != m || initial.len() != m {
            return Err(TimeDepError::Shape(format!(
                "coefficients {m}, base set {}, matrix path {}, initial {}",
                base.dim(),
                path.dim(),
                initial.len()
            )));
        }
        if !(horizon.0 < horizon.1 && horizon.0.is_finite() && horizon.1.is_finite()) {
            return Err(TimeDepError::Config(format!("invalid horizon {horizon:?}")));
        }
        let prob = Self { base, path, coefficients, initial, horizon };
        prob.check_ellipticity()?;
        let x0bar = prob.inverse_at(horizon.0)?.mul_vec(&prob.initial);
        if prob.base.domain_distance(&x0bar) > tol::GEOMETRIC {
            return Err(TimeDepError::Config("x₀ does not lie in H(t₀)Ξ".into()));
        }
        Ok(prob)
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn matrix_at(&self, t: f64) -> Matrix {
        self.path.at_time(t).expect("time-only matrix path")
    }

    fn inverse_at(&self, t: f64) -> Result<Matrix, TimeDepError> {
        Ok(inverse_spd(&self.matrix_at(t))?)
    }

    fn check_ellipticity(&self) -> Result<(), TimeDepError> {
        let (t0, t1) = self.horizon;
        let (a, b) = (self.path.a_h(), self.path.b_h());
        for i in 0..ELLIPTICITY_SAMPLES {
            let t = t0 + (t1 - t0) * i as f64 / (ELLIPTICITY_SAMPLES - 1) as f64;
            let h = self.matrix_at(t);
            let eig = symmetric_eigen(&h.symmetrized())?;
            let slack = tol::GEOMETRIC * b.max(1.0);
            if h.symmetry_residual() > slack || eig.min() < a - slack || eig.max() > b + slack {
                return Err(TimeDepError::Reduction { t, min: eig.min(), max: eig.max(), a_h: a, b_h: b });
            }
        }
        Ok(())
    }

    /// Largest `|H′(t)|_F` over the ellipticity sample times.
    fn derivative_bound(&self) -> (f64, bool) {
        let (t0, t1) = self.horizon;
        let step = fd_step(self.horizon);
        let mut analytic = true;
        let mut bound = 0.0_f64;
        for i in 0..ELLIPTICITY_SAMPLES {
            let t = t0 + (t1 - t0) * i as f64 / (ELLIPTICITY_SAMPLES - 1) as f64;
            let (d, exact) = self.path.derivative_at(t, step).expect("time-only matrix path");
            analytic &= exact;
            bound = bound.max(d.frobenius());
        }
        (bound, analytic)
    }

    /// Distance of `x` from `H(t)Ξ`, bounded by `b_H · dist(H^{-1}(t)x, Ξ)`.
    pub fn moving_distance(&self, t: f64, x: &[f64]) -> Result<f64, TimeDepError> {
        let xbar = self.inverse_at(t)?.mul_vec(x);
        let d = self.base.domain_distance(&xbar);
        if let Some(Geometry::HalfSpace(_)) | Some(Geometry::Box { .. }) = self.base.geometry() {
            if self.dim() == 1 {
                return Ok(d * self.matrix_at(t)[(0, 0)]);
            }
        }
        Ok(d * self.path.b_h())
    }
}

fn fd_step(horizon: (f64, f64)) -> f64 {
    1e-6 * (horizon.1 - horizon.0)
}

/// Fixed-set system produced by [`reduce_time_dependent`].
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub system: System,
    pub form: CorrectionForm,
    /// `H′` came from central differences rather than an analytic formula.
    pub finite_difference: bool,
}

/// Oblique system for `x̄ = H^{-1}(t)x` on `Ξ` with matrix `(H^{-1}(t))²`.
pub fn reduce_time_dependent(prob: &MovingConstraintProblem, form: CorrectionForm) -> Result<ReducedSystem, TimeDepError> {
    let m = prob.dim();
    let d = prob.coefficients.noise_dim();
    let (a_h, b_h) = (prob.path.a_h(), prob.path.b_h());
    let (dmax, analytic) = prob.derivative_bound();
    let step = fd_step(prob.horizon);
    let sign = form.drift_sign();

    let path = prob.path.clone();
    let matrices = move |t: f64| -> (Matrix, Matrix, Matrix) {
        let h = path.at_time(t).expect("time-only matrix path");
        let inv = inverse_spd(&h).expect("validated elliptic path");
        let (dh, _) = path.derivative_at(t, step).expect("time-only matrix path");
        (h, inv, dh)
    };
    let matrices = Arc::new(matrices);

    let (mf, coeffs) = (matrices.clone(), prob.coefficients.clone());
    let drift = Arc::new(move |t: f64, xbar: &[f64], mu: &EmpiricalMeasure, u: &[f64], out: &mut [f64]| {
        let (h, inv, dh) = mf(t);
        let x = h.mul_vec(xbar);
        let mut f = vec![0.0; xbar.len()];
        coeffs.drift_into(t, &x, mu, u, &mut f);
        let corr = dh.mul_vec(xbar);
        for (fi, ci) in f.iter_mut().zip(&corr) {
            *fi += sign * ci;
        }
        inv.mul_vec_into(&f, out);
    });
    let (mg, coeffs) = (matrices.clone(), prob.coefficients.clone());
    let diffusion = Arc::new(move |t: f64, xbar: &[f64], mu: &EmpiricalMeasure, u: &[f64], out: &mut [f64]| {
        let (h, inv, dh) = mg(t);
        let x = h.mul_vec(xbar);
        let mut g = vec![0.0; m * d];
        coeffs.diffusion_into(t, &x, mu, u, &mut g);
        if form == CorrectionForm::Additive {
            let corr = dh.mul_vec(xbar);
            for r in 0..m {
                for c in 0..d {
                    g[r * d + c] += corr[r];
                }
            }
        }
        for r in 0..m {
            for c in 0..d {
                out[r * d + c] = (0..m).map(|k| inv[(r, k)] * g[k * d + c]).sum();
            }
        }
    });
    let noise_terms = if form == CorrectionForm::Additive { 2.0 } else { 1.0 };
    let lipschitz = (prob.coefficients.lipschitz() * b_h.max(1.0) + noise_terms * dmax) / a_h;
    let coefficients =
        CoefficientField::affine(m, d, prob.coefficients.control_dim(), drift, diffusion, lipschitz.max(f64::MIN_POSITIVE))?;

    let path = prob.path.clone();
    let square_inverse = Arc::new(move |t: f64, out: &mut Matrix| {
        let inv = inverse_spd(&path.at_time(t).expect("time-only matrix path")).expect("validated elliptic path");
        out.copy_from(&inv.matmul(&inv));
    });
    let oblique = ObliqueField::time_dependent(m, square_inverse, None, 1.0 / (b_h * b_h), 1.0 / (a_h * a_h))?;
    let initial = prob.inverse_at(prob.horizon.0)?.mul_vec(&prob.initial);
    let system = System::new("reduced", coefficients, oblique, prob.base.clone(), initial)?;
    Ok(ReducedSystem { system, form, finite_difference: !analytic })
}

/// `x(t_j) = H(t_j)x̄(t_j)` and `k(t_j) = Σ H^{-1}(t_i)Δk̄_i`.
pub fn lift_path(path: &ConstrainedPath, field: &ObliqueField) -> Result<ConstrainedPath, TimeDepError> {
    if field.dim() != path.dim() {
        return Err(TimeDepError::Shape(format!("path dimension {} vs matrix path {}", path.dim(), field.dim())));
    }
    if field.is_state_dependent() {
        return Err(TimeDepError::Config("lifting needs a time-only matrix path".into()));
    }
    let times = path.shared_times();
    let at = |t: f64| field.at_time(t).expect("time-only matrix path");
    let mut out = ConstrainedPath::new(times.clone(), &at(times[0]).mul_vec(path.state(0)));
    for j in 0..path.nodes() - 1 {
        let inv = inverse_spd(&at(times[j]))?;
        out.push(&at(times[j + 1]).mul_vec(path.state(j + 1)), &inv.mul_vec(&path.increment(j)));
    }
    Ok(out)
}

pub fn lift_solution(ensemble: &Ensemble, field: &ObliqueField) -> Result<Ensemble, TimeDepError> {
    let paths = ensemble.paths().map(|p| lift_path(p, field)).collect::<Result<Vec<_>, _>>()?;
    Ok(Ensemble::new(ensemble.particles(), paths))
}

/// Endpoints of a 1D base set.
fn interval(base: &ConvexConstraint) -> Option<(f64, f64)> {
    match base.geometry()? {
        Geometry::Box { lower, upper } if lower.len() == 1 => Some((lower[0], upper[0])),
        Geometry::HalfSpace(hs) if hs.dim() == 1 => {
            let (n, c) = (hs.normal[0], hs.offset);
            Some(if n > 0.0 { (f64::NEG_INFINITY, c / n) } else { (c / n, f64::INFINITY) })
        }
        _ => None,
    }
}

/// Euler steps projected onto `[h(t)·lo, h(t)·hi]` at each new node.
pub fn simulate_moving_interval(
    prob: &MovingConstraintProblem,
    grid: &TimeGrid,
    particles: usize,
    replications: usize,
    noise: &NoiseSource,
) -> Result<Ensemble, TimeDepError> {
    let (lo, hi) = interval(&prob.base)
        .ok_or_else(|| TimeDepError::Config("direct moving-set simulation needs a 1D interval".into()))?;
    if particles == 0 || replications == 0 {
        return Err(TimeDepError::Config("need particles and replications".into()));
    }
    let reps = (0..replications)
        .into_par_iter()
        .map(|r| moving_interval_replication(prob, grid, particles, noise, r, lo, hi))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ensemble::from_replications(reps))
}

fn moving_interval_replication(
    prob: &MovingConstraintProblem,
    grid: &TimeGrid,
    n: usize,
    noise: &NoiseSource,
    replication: usize,
    lo: f64,
    hi: f64,
) -> Result<Vec<ConstrainedPath>, TimeDepError> {
    let d = prob.coefficients.noise_dim();
    let scale = |t: f64| prob.matrix_at(t)[(0, 0)];
    let mut pn = ParticleNoise::new(noise, replication, n, d, grid)?;
    let times = grid.nodes();
    let mut paths: Vec<ConstrainedPath> = (0..n).map(|_| ConstrainedPath::new(times.clone(), &prob.initial)).collect();
    let mut x = prob.initial.repeat(n);
    let mut dw = vec![0.0; n * d];
    let (mut f, mut g) = ([0.0], vec![0.0; d]);
    for step in 0..grid.steps {
        pn.fill(&mut dw);
        let t = grid.node(step);
        let h = grid.h();
        let s = scale(t);
        let mu = EmpiricalMeasure::uniform(1, x.iter().map(|v| v / s).collect()).expect("non-empty particle set");
        let s_next = scale(grid.node(step + 1));
        let mut next = x.clone();
        for i in 0..n {
            prob.coefficients.drift_into(t, &x[i..i + 1], &mu, &[], &mut f);
            prob.coefficients.diffusion_into(t, &x[i..i + 1], &mu, &[], &mut g);
            let noise_term: f64 = (0..d).map(|c| g[c] * dw[i * d + c]).sum();
            let y = x[i] + h * f[0] + noise_term;
            next[i] = y.clamp(s_next * lo, s_next * hi);
            if !(next[i].abs() <= DIVERGENCE_BOUND) {
                return Err(SolverError::Divergence { step, replication, particle: i }.into());
            }
            paths[i].push(&next[i..i + 1], &[y - next[i]]);
        }
        x = next;
    }
    Ok(paths)
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceLevel {
    pub steps: usize,
    pub h: f64,
    /// Largest distance of lifted states from `H(t)Ξ`.
    pub feasibility: f64,
    /// `E sup_t |x_lifted − x_direct|` (1D intervals only).
    pub sup_distance: Option<f64>,
    pub max_sup_distance: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub form: CorrectionForm,
    pub finite_difference: bool,
    pub reduced_oblique_ok: bool,
    pub levels: Vec<EquivalenceLevel>,
    /// Sup-distance strictly decreasing along the ladder.
    pub monotone: Option<bool>,
}

impl EquivalenceReport {
    pub fn max_feasibility(&self) -> f64 {
        self.levels.iter().map(|l| l.feasibility).fold(0.0, f64::max)
    }
}

/// Simulates the reduced system on each grid of `ladder` (steps over the
/// horizon) with common noise, lifts, and compares with the direct solver
/// where one exists.
pub fn equivalence_check(
    prob: &MovingConstraintProblem,
    form: CorrectionForm,
    ladder: &[usize],
    particles: usize,
    replications: usize,
    noise: &NoiseSource,
) -> Result<EquivalenceReport, TimeDepError> {
    let finest = ladder.iter().copied().max().ok_or_else(|| TimeDepError::Config("empty grid ladder".into()))?;
    let noise = noise.with_resolution(finest);
    let reduced = reduce_time_dependent(prob, form)?;
    let sampler = StateSampler::new(prob.dim(), 2.0);
    let oblique_report = validate_oblique(&reduced.system.oblique, &sampler, 64, prob.horizon);
    let direct_available = interval(&prob.base).is_some();
    let mut levels = Vec::with_capacity(ladder.len());
    for &steps in ladder {
        let grid = TimeGrid::new(prob.horizon.0, prob.horizon.1, steps)?;
        let ens = simulate_projected(&reduced.system, &grid, particles, replications, &noise)?;
        let lifted = lift_solution(&ens, &prob.path)?;
        let mut feasibility = 0.0_f64;
        for p in lifted.paths() {
            for (j, &t) in p.times().iter().enumerate() {
                feasibility = feasibility.max(prob.moving_distance(t, p.state(j))?);
            }
        }
        let (sup_distance, max_sup_distance) = if direct_available {
            let direct = simulate_moving_interval(prob, &grid, particles, replications, &noise)?;
            let sups: Vec<f64> = lifted.paths().zip(direct.paths()).map(|(a, b)| a.sup_dist_sq(b).sqrt()).collect();
            let mean = sups.iter().sum::<f64>() / sups.len() as f64;
            (Some(mean), Some(sups.iter().cloned().fold(0.0, f64::max)))
        } else {
            (None, None)
        };
        levels.push(EquivalenceLevel { steps, h: grid.h(), feasibility, sup_distance, max_sup_distance });
    }
    let monotone = direct_available.then(|| {
        let mut sorted: Vec<&EquivalenceLevel> = levels.iter().collect();
        sorted.sort_by_key(|l| l.steps);
        sorted.windows(2).all(|w| w[1].sup_distance < w[0].sup_distance)
    });
    Ok(EquivalenceReport {
        form,
        finite_difference: reduced.finite_difference,
        reduced_oblique_ok: oblique_report.passed(),
        levels,
        monotone,
    })
}

/// Pushforward `μ ∘ H(t)` of the law of `x̄` back to the moving frame.
pub fn moving_frame_measure(mu_bar: &EmpiricalMeasure, h: &Matrix) -> EmpiricalMeasure {
    let pts: Vec<f64> = mu_bar.atoms().flat_map(|a| h.mul_vec(a)).collect();
    EmpiricalMeasure::uniform(mu_bar.dim(), pts).expect("non-empty measure")
}

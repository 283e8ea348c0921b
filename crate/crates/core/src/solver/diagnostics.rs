//! Solution-invariant checks on simulated ensembles: the subdifferential
//! inequality, feasibility, the discrete equation residual,
//! complementarity, and the interior estimate `∫⟨x − a, dk⟩ ≥ λ₁↕k↕ − …`.

use serde::Serialize;

use super::engine::{ControlSchedule, Scheme};
use super::{NoiseSource, ParticleNoise, SolverError, TimeGrid};
use crate::convex::{interior_constants, normal_cone_residual, ConvexConstraint, InteriorCertificate};
use crate::dynamics::System;
use crate::linalg::{dot, norm, Matrix};
use crate::measures::EmpiricalMeasure;
use crate::path::{ConstrainedPath, Ensemble};

/// Finite family of comparison paths: constants at `points` and the path
/// itself shifted by each of `shifts` (then mapped into the domain).
#[derive(Debug, Clone, Default, Serialize)]
pub struct ProbeFamily {
    pub points: Vec<Vec<f64>>,
    pub shifts: Vec<Vec<f64>>,
}

impl ProbeFamily {
    /// Initial state, origin, and `±δ` shifts along each axis.
    pub fn standard(system: &System, delta: f64) -> Self {
        let m = system.dim();
        let mut points = vec![system.initial.clone(), vec![0.0; m]];
        let mut shifts = Vec::new();
        for i in 0..m {
            for s in [-1.0, 1.0] {
                let mut v = vec![0.0; m];
                v[i] = s * delta;
                shifts.push(v.clone());
                let p: Vec<f64> = system.initial.iter().zip(&v).map(|(a, b)| a + 5.0 * b).collect();
                points.push(p);
            }
        }
        Self { points, shifts }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionDiagnostics {
    /// Largest `∫_s^t ⟨y − x, dk⟩ + ∫Π(x) − ∫Π(y)` over probes, paths and
    /// subintervals (≤ 0 for an exact solution).
    pub inclusion_residual: f64,
    /// Largest `dist(x(t), D(∂Π))`.
    pub feasibility_residual: f64,
    /// Largest `|x(t) + ∫H dk − x₀ − ∫f dt − ∫g dB|` over nodes.
    pub equation_residual: f64,
    /// Largest `Σ depth(x)|Δk| / ↕k↕(T)`: reflection away from the boundary.
    pub complementarity: f64,
    /// Largest normal-cone residual of `Δk` at reflecting steps (projected
    /// scheme, indicator constraints only).
    pub normal_cone_residual: f64,
    pub paths: usize,
}

/// Point at which `Δk` of step `j` lies in `∂Π`: the new state for the
/// projected scheme, `J_ε x_j` for the penalized one.
fn contact_point(c: &ConvexConstraint, scheme: Scheme, path: &ConstrainedPath, j: usize) -> Result<Vec<f64>, SolverError> {
    match scheme {
        Scheme::Projected => Ok(path.state(j + 1).to_vec()),
        Scheme::Penalized { epsilon } => Ok(c.resolvent(epsilon, path.state(j))?),
    }
}

fn domain_point(c: &ConvexConstraint, x: &[f64]) -> Result<Vec<f64>, SolverError> {
    Ok(match c.geometry() {
        Some(g) => {
            let mut out = vec![0.0; x.len()];
            g.project_into(x, &mut out)?;
            out
        }
        None => x.to_vec(),
    })
}

/// Largest sum over contiguous runs (0 for the empty run).
fn max_subarray(values: impl Iterator<Item = f64>) -> f64 {
    let (mut best, mut cur) = (0.0_f64, 0.0_f64);
    for v in values {
        cur = (cur + v).max(0.0);
        best = best.max(cur);
    }
    best
}

fn min_subarray(values: impl Iterator<Item = f64>) -> f64 {
    -max_subarray(values.map(|v| -v))
}

#[allow(clippy::too_many_arguments)]
pub fn residual_report(
    ensemble: &Ensemble,
    system: &System,
    scheme: Scheme,
    grid: &TimeGrid,
    noise: &NoiseSource,
    control: Option<&ControlSchedule>,
    probes: &ProbeFamily,
) -> Result<SolutionDiagnostics, SolverError> {
    let c = &system.constraint;
    let m = system.dim();
    let d = system.noise_dim();
    let n = ensemble.particles();
    let probe_points: Vec<Vec<f64>> =
        probes.points.iter().map(|p| domain_point(c, p)).collect::<Result<_, _>>()?;
    let mut diag = SolutionDiagnostics {
        inclusion_residual: 0.0,
        feasibility_residual: 0.0,
        equation_residual: 0.0,
        complementarity: 0.0,
        normal_cone_residual: 0.0,
        paths: ensemble.len(),
    };
    for r in 0..ensemble.replications() {
        let paths = ensemble.replication(r);
        let nodes = paths[0].nodes();
        // Equation residual, recomputing coefficients and Brownian increments.
        let mut pn = ParticleNoise::new(noise, r, n, d, grid)?;
        let mut dw = vec![0.0; n * d];
        let mut acc = vec![0.0; n * m];
        let (mut f, mut g, mut hk) = (vec![0.0; m], vec![0.0; m * d], vec![0.0; m]);
        let mut hmat = Matrix::zeros(m, m);
        for j in 0..nodes - 1 {
            let t = grid.node(j);
            let u: &[f64] = control.map_or(&[], |s| s.value_at(t));
            let atoms: Vec<f64> = paths.iter().flat_map(|p| p.state(j).to_vec()).collect();
            let mu = EmpiricalMeasure::uniform(m, atoms).map_err(|e| SolverError::Config(e.to_string()))?;
            pn.fill(&mut dw);
            let h = grid.node(j + 1) - t;
            for (i, p) in paths.iter().enumerate() {
                let x = p.state(j);
                system.coefficients.drift_into(t, x, &mu, u, &mut f);
                system.coefficients.diffusion_into(t, x, &mu, u, &mut g);
                system.oblique.eval_into(t, x, &mu, &mut hmat);
                hmat.mul_vec_into(&p.increment(j), &mut hk);
                let next = p.state(j + 1);
                let mut res = 0.0;
                for a in 0..m {
                    let noise_term: f64 = (0..d).map(|b| g[a * d + b] * dw[i * d + b]).sum();
                    acc[i * m + a] += hk[a] - h * f[a] - noise_term;
                    let e = next[a] + acc[i * m + a] - p.state(0)[a];
                    res += e * e;
                }
                diag.equation_residual = diag.equation_residual.max(res.sqrt());
            }
        }
        for p in paths {
            path_checks(c, scheme, p, &probe_points, &probes.shifts, &mut diag)?;
        }
    }
    Ok(diag)
}

fn path_checks(
    c: &ConvexConstraint,
    scheme: Scheme,
    p: &ConstrainedPath,
    probe_points: &[Vec<f64>],
    shifts: &[Vec<f64>],
    diag: &mut SolutionDiagnostics,
) -> Result<(), SolverError> {
    let nodes = p.nodes();
    let times = p.times();
    for j in 0..nodes {
        diag.feasibility_residual = diag.feasibility_residual.max(c.domain_distance(p.state(j)));
    }
    let steps = nodes - 1;
    let mut contacts = Vec::with_capacity(steps);
    let mut left_pi = Vec::with_capacity(steps);
    for j in 0..steps {
        let cp = contact_point(c, scheme, p, j)?;
        left_pi.push(match scheme {
            Scheme::Projected => c.value(p.state(j)),
            Scheme::Penalized { epsilon } => c.value(&c.resolvent(epsilon, p.state(j))?),
        });
        contacts.push(cp);
    }
    let increments: Vec<Vec<f64>> = (0..steps).map(|j| p.increment(j)).collect();
    let h: Vec<f64> = (0..steps).map(|j| times[j + 1] - times[j]).collect();
    let mut inclusion = |y: &dyn Fn(usize) -> Result<Vec<f64>, SolverError>| -> Result<(), SolverError> {
        let mut terms = Vec::with_capacity(steps);
        for j in 0..steps {
            let yj = y(j)?;
            let py = c.value(&yj);
            if !py.is_finite() {
                return Ok(());
            }
            let diff: Vec<f64> = yj.iter().zip(p.state(j)).map(|(a, b)| a - b).collect();
            terms.push(dot(&diff, &increments[j]) + h[j] * (left_pi[j] - py));
        }
        diag.inclusion_residual = diag.inclusion_residual.max(max_subarray(terms.into_iter()));
        Ok(())
    };
    for pt in probe_points {
        inclusion(&|_| Ok(pt.clone()))?;
    }
    for v in shifts {
        inclusion(&|j| {
            let shifted: Vec<f64> = p.state(j).iter().zip(v).map(|(a, b)| a + b).collect();
            domain_point(c, &shifted)
        })?;
    }
    if let Some(g) = c.geometry() {
        let total = p.variation(nodes - 1);
        if total > 0.0 {
            let weighted: f64 = (0..steps).map(|j| g.depth(&contacts[j]).max(0.0) * norm(&increments[j])).sum();
            diag.complementarity = diag.complementarity.max(weighted / total);
        }
        if c.is_indicator() && scheme == Scheme::Projected {
            for j in 0..steps {
                if norm(&increments[j]) > 0.0 {
                    let r = normal_cone_residual(c, &contacts[j], &increments[j], probe_points)?;
                    diag.normal_cone_residual = diag.normal_cone_residual.max(r);
                }
            }
        }
    }
    Ok(())
}

/// Smallest margin of `∫_s^t⟨x − a, dk⟩ − λ₁(↕k↕_t − ↕k↕_s) + λ₂∫|x − a| + λ₃(t − s)`
/// over paths and subintervals (0 when it never goes negative).
pub fn interior_margin(
    ensemble: &Ensemble,
    constraint: &ConvexConstraint,
    cert: &InteriorCertificate,
    scheme: Scheme,
) -> Result<f64, SolverError> {
    let k = interior_constants(constraint, cert)?;
    let a = &cert.anchor;
    let mut margin = 0.0_f64;
    for p in ensemble.paths() {
        let times = p.times();
        let terms = (0..p.nodes() - 1).map(|j| {
            // Left states for the penalized scheme satisfy the same pointwise
            // bound since x − J_ε x is parallel to ∇Π_ε(x).
            let x = match scheme {
                Scheme::Projected => p.state(j + 1),
                Scheme::Penalized { .. } => p.state(j),
            };
            let dk = p.increment(j);
            let diff: Vec<f64> = x.iter().zip(a).map(|(u, v)| u - v).collect();
            let h = times[j + 1] - times[j];
            dot(&diff, &dk) - k.lambda1 * norm(&dk) + k.lambda2 * norm(&diff) * h + k.lambda3 * h
        });
        margin = margin.min(min_subarray(terms));
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subarray_extremes() {
        assert_eq!(max_subarray([1.0, -3.0, 2.0, 2.0, -1.0].into_iter()), 4.0);
        assert_eq!(max_subarray([-1.0, -2.0].into_iter()), 0.0);
        assert_eq!(min_subarray([1.0, -3.0, 2.0, -2.5].into_iter()), -3.5);
    }
}

use serde::Serialize;

use super::{ConvexConstraint, ConvexError};
use crate::linalg::{dist, dot, norm};
use crate::tol;

pub const PROPERTY_NAMES: [&str; 7] = ["a", "b", "c", "d", "e", "f", "g"];

/// Largest violation of each Moreau–Yosida identity over the sampled
/// points and regularization pairs.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub violations: [f64; 7],
    pub tolerance: f64,
    pub samples: usize,
    pub epsilons: Vec<f64>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.iter().all(|v| *v <= self.tolerance)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        PROPERTY_NAMES
            .iter()
            .zip(&self.violations)
            .filter(|(_, v)| **v > self.tolerance)
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().cloned().fold(0.0, f64::max)
    }
}

struct Evaluated {
    eps: f64,
    value: Vec<f64>,
    grad: Vec<Vec<f64>>,
    res: Vec<Vec<f64>>,
}

/// Evaluates properties (a)–(g) of the Moreau–Yosida approximation:
///
/// (a) `Π_ε = ε/2 |∇Π_ε|² + Π(J_ε x)`; (b) `∇Π_ε(x) ∈ ∂Π(J_ε x)`;
/// (c) `|∇Π_ε x − ∇Π_ε y| ≤ |x − y|/ε`; (d) monotonicity;
/// (e) `⟨∇Π_ε x − ∇Π_ε' y, x − y⟩ ≥ −(ε + ε')⟨∇Π_ε x, ∇Π_ε' y⟩`;
/// (f) `Π_ε(0) = 0`, `J_ε 0 = ∇Π_ε(0) = 0`, `Π_ε ≥ 0`;
/// (g) `ε/2 |∇Π_ε|² ≤ Π_ε(x) ≤ ⟨∇Π_ε(x), x⟩`.
pub fn check_yosida_properties(
    constraint: &ConvexConstraint,
    epsilons: &[f64],
    samples: &[Vec<f64>],
) -> Result<PropertyReport, ConvexError> {
    let m = constraint.dim();
    for s in samples {
        if s.len() != m {
            return Err(ConvexError::Dimension { expected: m, got: s.len() });
        }
    }
    let mut evals = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut ev = Evaluated { eps, value: vec![], grad: vec![], res: vec![] };
        for x in samples {
            let j = constraint.resolvent(eps, x)?;
            let g: Vec<f64> = x.iter().zip(&j).map(|(a, b)| (a - b) / eps).collect();
            ev.value.push(constraint.yosida_value(eps, x)?);
            ev.grad.push(g);
            ev.res.push(j);
        }
        evals.push(ev);
    }

    let mut viol = [0.0_f64; 7];
    let bump = |slot: &mut f64, v: f64| {
        if v.is_nan() {
            *slot = f64::INFINITY;
        } else if v > *slot {
            *slot = v;
        }
    };
    let zero = vec![0.0; m];
    for ev in &evals {
        let eps = ev.eps;
        let n = samples.len();
        for i in 0..n {
            let x = &samples[i];
            let g = &ev.grad[i];
            let j = &ev.res[i];
            let gg = dot(g, g);
            let pj = constraint.value(j);
            bump(&mut viol[0], (ev.value[i] - 0.5 * eps * gg - pj).abs());
            // (b) against every resolvent point and every sample in the domain.
            for v in ev.res.iter().chain(samples.iter()) {
                let pv = constraint.value(v);
                if !pv.is_finite() {
                    continue;
                }
                let lhs = dot(g, &v.iter().zip(j).map(|(a, b)| a - b).collect::<Vec<_>>()) + pj;
                bump(&mut viol[1], lhs - pv);
            }
            bump(&mut viol[5], -ev.value[i]);
            bump(&mut viol[6], 0.5 * eps * gg - ev.value[i]);
            bump(&mut viol[6], ev.value[i] - dot(g, x));
            for k in i + 1..n {
                let y = &samples[k];
                let h = &ev.grad[k];
                let dxy = dist(x, y);
                bump(&mut viol[2], dist(g, h) - dxy / eps);
                let inner: f64 = (0..m).map(|c| (g[c] - h[c]) * (x[c] - y[c])).sum();
                bump(&mut viol[3], -inner);
            }
        }
        bump(&mut viol[5], constraint.yosida_value(eps, &zero)?.abs());
        bump(&mut viol[5], norm(&constraint.resolvent(eps, &zero)?));
        bump(&mut viol[5], norm(&constraint.yosida_gradient(eps, &zero)?));
    }
    // (e) over every ordered pair of regularizations and sample pairs,
    // including equal ones.
    for a in &evals {
        for b in &evals {
            for (i, x) in samples.iter().enumerate() {
                let g = &a.grad[i];
                for (k, y) in samples.iter().enumerate() {
                    let h = &b.grad[k];
                    let inner: f64 = (0..m).map(|c| (g[c] - h[c]) * (x[c] - y[c])).sum();
                    bump(&mut viol[4], -(a.eps + b.eps) * dot(g, h) - inner);
                }
            }
        }
    }
    let tolerance = if constraint.is_closed_form() { tol::COMPOSITE } else { tol::GRID };
    Ok(PropertyReport { violations: viol, tolerance, samples: samples.len(), epsilons: epsilons.to_vec() })
}

/// `max(0, max_v ⟨u, v − x⟩/(1 + |u|))` over probe points `v` in the set;
/// `+∞` when `x` itself is outside the set.
pub fn normal_cone_residual(
    constraint: &ConvexConstraint,
    x: &[f64],
    u: &[f64],
    probes: &[Vec<f64>],
) -> Result<f64, ConvexError> {
    let g = match constraint {
        ConvexConstraint::Indicator(g) => g,
        _ => return Err(ConvexError::NotIndicator),
    };
    if !g.contains(x, tol::GEOMETRIC) {
        return Ok(f64::INFINITY);
    }
    let scale = 1.0 + norm(u);
    let mut worst = 0.0_f64;
    for v in probes {
        let s: f64 = u.iter().zip(v.iter().zip(x)).map(|(a, (p, q))| a * (p - q)).sum();
        worst = worst.max(s / scale);
    }
    Ok(worst)
}

/// Anchor `a` and radius `r₀` with the closed ball `B̄(a, r₀)` inside the
/// domain of `∂Π`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct InteriorCertificate {
    pub anchor: Vec<f64>,
    pub radius: f64,
}

impl InteriorCertificate {
    pub fn new(anchor: Vec<f64>, radius: f64) -> Result<Self, ConvexError> {
        if !(radius.is_finite() && radius >= 0.0) || anchor.iter().any(|v| !v.is_finite()) {
            return Err(ConvexError::Config("certificate needs a finite anchor and radius >= 0".into()));
        }
        Ok(Self { anchor, radius })
    }
}

/// Constants of `∫⟨x − a, dk⟩ ≥ λ₁↕k↕ − λ₂∫|x − a| − λ₃(t − s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteriorConstants {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// False when the constraint has a smooth part whose contribution is not
    /// covered by the indicator estimate.
    pub verified: bool,
}

pub fn interior_constants(
    constraint: &ConvexConstraint,
    cert: &InteriorCertificate,
) -> Result<InteriorConstants, ConvexError> {
    let (set, verified) = match constraint {
        ConvexConstraint::Indicator(g) => (g, true),
        ConvexConstraint::Sum { set, .. } => (set, false),
        ConvexConstraint::Smooth(_) => return Err(ConvexError::NotIndicator),
    };
    if cert.anchor.len() != set.dim() {
        return Err(ConvexError::Dimension { expected: set.dim(), got: cert.anchor.len() });
    }
    let depth = set.depth(&cert.anchor);
    if depth < cert.radius - tol::GEOMETRIC {
        return Err(ConvexError::Certificate { radius: cert.radius, depth });
    }
    Ok(InteriorConstants { lambda1: cert.radius, lambda2: 0.0, lambda3: 0.0, verified })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::{Geometry, HalfSpace, SmoothConvex};
    use crate::linalg::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(m: usize, n: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..m).map(|_| rng.random_range(-spread..spread)).collect()).collect()
    }

    #[test]
    fn half_space_passes_all() {
        let c = ConvexConstraint::indicator(Geometry::HalfSpace(HalfSpace::new(vec![1.0, -2.0], 0.5).unwrap()))
            .unwrap();
        let r = check_yosida_properties(&c, &[0.1, 0.01], &points(2, 200, 3.0, 1)).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn diagonal_pair_and_origin_are_exact() {
        let c = ConvexConstraint::indicator(Geometry::ball(vec![0.0], 1.0)).unwrap();
        let r = check_yosida_properties(&c, &[0.3], &[vec![0.0], vec![0.0]]).unwrap();
        assert_eq!(r.violations, [0.0; 7]);
    }

    #[test]
    fn detects_broken_gradient() {
        // A "constraint" whose smooth part is concave must fail (d).
        let q = Matrix::from_diag(&[-1.0]);
        assert!(SmoothConvex::quadratic(q).is_err());
    }

    #[test]
    fn normal_cone_examples() {
        let c = ConvexConstraint::indicator(Geometry::HalfSpace(HalfSpace::lower_bound(2, 0, 0.0))).unwrap();
        let probes: Vec<Vec<f64>> = points(2, 100, 5.0, 3).into_iter().map(|p| c.project(&p).unwrap()).collect();
        assert_eq!(normal_cone_residual(&c, &[0.0, 1.0], &[-3.0, 0.0], &probes).unwrap(), 0.0);
        assert_eq!(normal_cone_residual(&c, &[2.0, 1.0], &[0.0, 0.0], &probes).unwrap(), 0.0);
        let x = [2.0, 1.0];
        let u = [0.5, -0.25];
        let probe = vec![vec![x[0] + 0.1 * u[0], x[1] + 0.1 * u[1]]];
        assert!(normal_cone_residual(&c, &x, &u, &probe).unwrap() > 0.0);
        assert_eq!(normal_cone_residual(&c, &[-1.0, 0.0], &[0.0, 0.0], &probes).unwrap(), f64::INFINITY);
    }

    #[test]
    fn interior_constant_examples() {
        let ball = ConvexConstraint::indicator(Geometry::ball(vec![0.0, 0.0], 1.0)).unwrap();
        let k = interior_constants(&ball, &InteriorCertificate::new(vec![0.0, 0.0], 0.9).unwrap()).unwrap();
        assert_eq!((k.lambda1, k.lambda2, k.lambda3, k.verified), (0.9, 0.0, 0.0, true));
        let hs = ConvexConstraint::indicator(Geometry::HalfSpace(HalfSpace::lower_bound(2, 0, 0.0))).unwrap();
        let k = interior_constants(&hs, &InteriorCertificate::new(vec![1.0, 0.0], 1.0).unwrap()).unwrap();
        assert_eq!(k.lambda1, 1.0);
        let k = interior_constants(&hs, &InteriorCertificate::new(vec![1.0, 0.0], 0.0).unwrap()).unwrap();
        assert_eq!(k.lambda1, 0.0);
        let err = interior_constants(&ball, &InteriorCertificate::new(vec![0.5, 0.0], 0.9).unwrap());
        assert!(matches!(err, Err(ConvexError::Certificate { .. })));
    }
}

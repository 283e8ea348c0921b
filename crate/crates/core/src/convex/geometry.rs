use serde::{Deserialize, Serialize};

use super::ConvexError;
use crate::linalg::{dot, norm, Matrix};
use crate::tol;

/// Dykstra sweeps before giving up on an intersection.
pub const DYKSTRA_MAX_SWEEPS: usize = 10_000;
/// Stop once one full sweep moves the iterate by at most this much.
pub const DYKSTRA_STOP: f64 = 1e-10;

/// `{x : <normal, x> <= offset}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self, ConvexError> {
        let n = norm(&normal);
        if !(n > 0.0 && n.is_finite()) || !offset.is_finite() {
            return Err(ConvexError::Config("half-space normal must be finite and non-zero".into()));
        }
        Ok(Self { normal, offset })
    }

    /// `{x : x[axis] >= value}`.
    pub fn lower_bound(dim: usize, axis: usize, value: f64) -> Self {
        let mut normal = vec![0.0; dim];
        normal[axis] = -1.0;
        Self { normal, offset: -value }
    }

    /// `{x : x[axis] <= value}`.
    pub fn upper_bound(dim: usize, axis: usize, value: f64) -> Self {
        let mut normal = vec![0.0; dim];
        normal[axis] = 1.0;
        Self { normal, offset: value }
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Signed violation `<n, x> - c` (positive outside).
    pub fn excess(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }

    fn normal_sq(&self) -> f64 {
        dot(&self.normal, &self.normal)
    }

    /// Projection in the metric `<u, H^{-1} v>`; `metric_inv = None` is the
    /// Euclidean case.
    pub(crate) fn project_metric_into(&self, y: &[f64], metric_inv: Option<&Matrix>, out: &mut [f64]) -> f64 {
        let v = self.excess(y);
        out.copy_from_slice(y);
        if v <= 0.0 {
            return 0.0;
        }
        match metric_inv {
            None => {
                let lam = v / self.normal_sq();
                for (o, a) in out.iter_mut().zip(&self.normal) {
                    *o -= lam * a;
                }
                lam
            }
            Some(h) => {
                let ha = h.mul_vec(&self.normal);
                let lam = v / dot(&self.normal, &ha);
                for (o, a) in out.iter_mut().zip(&ha) {
                    *o -= lam * a;
                }
                lam
            }
        }
    }
}

/// Closed convex sets supported as constraint domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Geometry {
    HalfSpace(HalfSpace),
    /// Axis-aligned box; bounds may be infinite.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Finite intersection of half-spaces.
    Polytope { faces: Vec<HalfSpace> },
}

impl Geometry {
    pub fn half_space(normal: Vec<f64>, offset: f64) -> Result<Self, ConvexError> {
        Ok(Geometry::HalfSpace(HalfSpace::new(normal, offset)?))
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Geometry::Box { lower, upper }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Geometry::Ball { center, radius }
    }

    pub fn polytope(faces: Vec<HalfSpace>) -> Self {
        Geometry::Polytope { faces }
    }

    /// `[0, inf)^dim`-style half-line in one coordinate.
    pub fn half_line() -> Self {
        Geometry::HalfSpace(HalfSpace::lower_bound(1, 0, 0.0))
    }

    pub fn dim(&self) -> usize {
        match self {
            Geometry::HalfSpace(h) => h.dim(),
            Geometry::Box { lower, .. } => lower.len(),
            Geometry::Ball { center, .. } => center.len(),
            Geometry::Polytope { faces } => faces.first().map_or(0, HalfSpace::dim),
        }
    }

    /// Shape checks plus the standing requirement that the origin belongs to
    /// the set.
    pub fn validate(&self) -> Result<(), ConvexError> {
        let cfg = |m: &str| Err(ConvexError::Config(m.to_string()));
        match self {
            Geometry::HalfSpace(h) => {
                HalfSpace::new(h.normal.clone(), h.offset)?;
                if h.offset < 0.0 {
                    return cfg("half-space excludes the origin (offset < 0)");
                }
            }
            Geometry::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return cfg("box bounds must have equal, non-zero length");
                }
                for (l, u) in lower.iter().zip(upper) {
                    if l.is_nan() || u.is_nan() || l > u {
                        return cfg("box requires lower <= upper in every coordinate");
                    }
                    if *l > 0.0 || *u < 0.0 {
                        return cfg("box excludes the origin");
                    }
                }
            }
            Geometry::Ball { center, radius } => {
                if center.is_empty() || !(radius.is_finite() && *radius > 0.0) {
                    return cfg("ball needs a non-empty center and positive finite radius");
                }
                if norm(center) > *radius {
                    return cfg("ball excludes the origin");
                }
            }
            Geometry::Polytope { faces } => {
                if faces.is_empty() {
                    return cfg("polytope needs at least one face");
                }
                let d = faces[0].dim();
                for f in faces {
                    HalfSpace::new(f.normal.clone(), f.offset)?;
                    if f.dim() != d {
                        return cfg("polytope faces have mixed dimensions");
                    }
                    if f.offset < 0.0 {
                        return cfg("polytope face excludes the origin");
                    }
                }
            }
        }
        Ok(())
    }

    /// Euclidean projection written into `out`.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ConvexError> {
        match self {
            Geometry::HalfSpace(h) => {
                h.project_metric_into(x, None, out);
            }
            Geometry::Box { lower, upper } => {
                for i in 0..x.len() {
                    out[i] = x[i].clamp(lower[i], upper[i]);
                }
            }
            Geometry::Ball { center, radius } => {
                let r = crate::linalg::dist(x, center);
                if r <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let s = radius / r;
                    for i in 0..x.len() {
                        out[i] = center[i] + (x[i] - center[i]) * s;
                    }
                }
            }
            Geometry::Polytope { faces } => {
                let p = dykstra(faces, x, None)?;
                out.copy_from_slice(&p);
            }
        }
        Ok(())
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Geometry::HalfSpace(h) => h.excess(x).max(0.0) / h.normal_sq().sqrt(),
            Geometry::Box { lower, upper } => x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let d = (lower[i] - v).max(v - upper[i]).max(0.0);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Geometry::Ball { center, radius } => (crate::linalg::dist(x, center) - radius).max(0.0),
            Geometry::Polytope { .. } => {
                let mut p = vec![0.0; x.len()];
                match self.project_into(x, &mut p) {
                    Ok(()) => crate::linalg::dist(x, &p),
                    Err(_) => f64::INFINITY,
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.distance(x) <= tol
    }

    /// Signed distance to the boundary: positive inside, negative outside
    /// (for half-spaces, boxes and balls the magnitude outside is exact; for
    /// polytopes it is the largest face violation).
    pub fn depth(&self, x: &[f64]) -> f64 {
        match self {
            Geometry::HalfSpace(h) => -h.excess(x) / h.normal_sq().sqrt(),
            Geometry::Box { lower, upper } => {
                let inside = x.iter().enumerate().all(|(i, &v)| v >= lower[i] && v <= upper[i]);
                if inside {
                    x.iter()
                        .enumerate()
                        .map(|(i, &v)| (v - lower[i]).min(upper[i] - v))
                        .fold(f64::INFINITY, f64::min)
                } else {
                    -self.distance(x)
                }
            }
            Geometry::Ball { center, radius } => radius - crate::linalg::dist(x, center),
            Geometry::Polytope { faces } => faces
                .iter()
                .map(|f| -f.excess(x) / f.normal_sq().sqrt())
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Dykstra's alternating projections onto an intersection of half-spaces,
/// in the metric `<u, H^{-1} v>` when `metric_inv = Some(H)`.
pub(crate) fn dykstra(faces: &[HalfSpace], y: &[f64], metric_inv: Option<&Matrix>) -> Result<Vec<f64>, ConvexError> {
    let m = y.len();
    let mut x = y.to_vec();
    let mut incr = vec![vec![0.0; m]; faces.len()];
    let mut z = vec![0.0; m];
    let mut next = vec![0.0; m];
    let mut start = vec![0.0; m];
    for _ in 0..DYKSTRA_MAX_SWEEPS {
        start.copy_from_slice(&x);
        for (face, p) in faces.iter().zip(incr.iter_mut()) {
            for i in 0..m {
                z[i] = x[i] + p[i];
            }
            face.project_metric_into(&z, metric_inv, &mut next);
            for i in 0..m {
                p[i] = z[i] - next[i];
            }
            x.copy_from_slice(&next);
        }
        if crate::linalg::dist(&x, &start) <= DYKSTRA_STOP {
            let worst = faces.iter().map(|f| f.excess(&x) / f.normal_sq().sqrt()).fold(0.0, f64::max);
            if worst > tol::COMPOSITE {
                return Err(ConvexError::Infeasible { violation: worst });
            }
            return Ok(x);
        }
    }
    let worst = faces.iter().map(|f| f.excess(&x) / f.normal_sq().sqrt()).fold(0.0, f64::max);
    Err(ConvexError::Infeasible { violation: worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_projections() {
        let h = Geometry::HalfSpace(HalfSpace::lower_bound(2, 0, 0.0));
        let mut out = [0.0; 2];
        h.project_into(&[-2.0, 3.0], &mut out).unwrap();
        assert_eq!(out, [0.0, 3.0]);

        let b = Geometry::ball(vec![0.0, 0.0], 1.0);
        b.project_into(&[3.0, 4.0], &mut out).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-12 && (out[1] - 0.8).abs() < 1e-12);

        let bx = Geometry::boxed(vec![-1.0, 0.0], vec![1.0, f64::INFINITY]);
        bx.project_into(&[5.0, -3.0], &mut out).unwrap();
        assert_eq!(out, [1.0, 0.0]);
        for g in [&h, &b, &bx] {
            g.project_into(&[0.25, 0.5], &mut out).unwrap();
            assert_eq!(out, [0.25, 0.5]);
        }
    }

    #[test]
    fn dykstra_square_matches_box() {
        let faces = vec![
            HalfSpace::upper_bound(2, 0, 1.0),
            HalfSpace::lower_bound(2, 0, -1.0),
            HalfSpace::upper_bound(2, 1, 1.0),
            HalfSpace::lower_bound(2, 1, -1.0),
        ];
        let p = Geometry::polytope(faces);
        let bx = Geometry::boxed(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        for x in [[3.0, 2.0], [-4.0, 0.5], [0.2, -7.0], [0.1, 0.1]] {
            p.project_into(&x, &mut a).unwrap();
            bx.project_into(&x, &mut b).unwrap();
            assert!(crate::linalg::dist(&a, &b) < 1e-9, "{x:?}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn dykstra_oblique_corner() {
        // Triangle-ish wedge: x <= 1, y <= 1, x + y <= 1.5.
        let faces = vec![
            HalfSpace::upper_bound(2, 0, 1.0),
            HalfSpace::upper_bound(2, 1, 1.0),
            HalfSpace::new(vec![1.0, 1.0], 1.5).unwrap(),
        ];
        let x = dykstra(&faces, &[2.0, 2.0], None).unwrap();
        assert!((x[0] - 0.75).abs() < 1e-8 && (x[1] - 0.75).abs() < 1e-8, "{x:?}");
    }

    #[test]
    fn rejects_sets_without_origin() {
        assert!(Geometry::boxed(vec![0.5], vec![1.0]).validate().is_err());
        assert!(Geometry::ball(vec![3.0, 0.0], 1.0).validate().is_err());
        assert!(Geometry::HalfSpace(HalfSpace::lower_bound(1, 0, 1.0)).validate().is_err());
        assert!(Geometry::half_line().validate().is_ok());
        assert!(HalfSpace::new(vec![0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn depth_and_distance() {
        let b = Geometry::ball(vec![0.0, 0.0], 1.0);
        assert!((b.depth(&[0.5, 0.0]) - 0.5).abs() < 1e-15);
        assert!((b.distance(&[2.0, 0.0]) - 1.0).abs() < 1e-15);
        let bx = Geometry::boxed(vec![-1.0, -2.0], vec![1.0, 2.0]);
        assert!((bx.depth(&[0.0, 1.5]) - 0.5).abs() < 1e-15);
    }
}

//! One-step oblique Skorohod problem: find `x ∈ K`, `Δk ∈ N_K(x)` with
//! `x + HΔk = y`.
//!
//! This is the projection of `y` onto `K` in the metric `⟨u, H^{-1}v⟩`,
//! with `Δk = H^{-1}(y − x)`.

use thiserror::Error;

use crate::convex::{dykstra, ConvexConstraint, ConvexError, Geometry, HalfSpace};
use crate::linalg::{cholesky, cholesky_solve, dot, spd_eigen, Matrix, SpectralError, SymmetricEigen};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StepError {
    #[error("oblique reflection needs an indicator constraint")]
    NotIndicator,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error("oblique projection did not converge (last residual {residual:.3e})")]
    NoConvergence { residual: f64 },
}

/// `H` with lazily computed factorizations, reusable across particles
/// while `H` does not change.
#[derive(Debug, Clone)]
pub struct PreparedOblique {
    h: Matrix,
    diagonal: bool,
    eigen: Option<SymmetricEigen>,
    chol: Option<Matrix>,
}

impl PreparedOblique {
    pub fn new(h: Matrix) -> Self {
        let diagonal = h.is_diagonal();
        Self { h, diagonal, eigen: None, chol: None }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.h
    }

    pub fn reset(&mut self, h: &Matrix) {
        self.h.copy_from(h);
        self.diagonal = h.is_diagonal();
        self.eigen = None;
        self.chol = None;
    }

    fn eigen(&mut self) -> Result<&SymmetricEigen, StepError> {
        if self.eigen.is_none() {
            self.eigen = Some(spd_eigen(&self.h)?);
        }
        Ok(self.eigen.as_ref().expect("set above"))
    }

    fn chol(&mut self) -> Result<&Matrix, StepError> {
        if self.chol.is_none() {
            self.chol = Some(cholesky(&self.h.symmetrized())?);
        }
        Ok(self.chol.as_ref().expect("set above"))
    }

    /// `Δk = H^{-1}(y − x)`.
    fn solve_into(&mut self, rhs: &[f64], out: &mut [f64]) -> Result<(), StepError> {
        if self.diagonal {
            for i in 0..rhs.len() {
                out[i] = rhs[i] / self.h[(i, i)];
            }
            return Ok(());
        }
        let l = self.chol()?;
        cholesky_solve(l, rhs, out);
        Ok(())
    }
}

/// Convenience form returning `(x, Δk)`.
pub fn oblique_skorohod_step(
    constraint: &ConvexConstraint,
    h: &Matrix,
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), StepError> {
    let g = match constraint {
        ConvexConstraint::Indicator(g) => g,
        _ => return Err(StepError::NotIndicator),
    };
    let mut prepared = PreparedOblique::new(h.clone());
    let mut x = vec![0.0; y.len()];
    let mut dk = vec![0.0; y.len()];
    skorohod_into(g, &mut prepared, y, &mut x, &mut dk)?;
    Ok((x, dk))
}

pub fn skorohod_into(
    geometry: &Geometry,
    h: &mut PreparedOblique,
    y: &[f64],
    x: &mut [f64],
    dk: &mut [f64],
) -> Result<(), StepError> {
    match geometry {
        Geometry::HalfSpace(face) => {
            half_space(face, h, y, x, dk);
            Ok(())
        }
        Geometry::Box { lower, upper } => boxed(lower, upper, h, y, x, dk),
        Geometry::Ball { center, radius } => ball(center, *radius, h, y, x, dk),
        Geometry::Polytope { faces } => {
            if geometry.contains(y, 0.0) {
                x.copy_from_slice(y);
                dk.fill(0.0);
                return Ok(());
            }
            let p = dykstra(faces, y, Some(&h.h))?;
            x.copy_from_slice(&p);
            let r: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            h.solve_into(&r, dk)
        }
    }
}

fn half_space(face: &HalfSpace, h: &PreparedOblique, y: &[f64], x: &mut [f64], dk: &mut [f64]) {
    let v = face.excess(y);
    x.copy_from_slice(y);
    if v <= 0.0 {
        dk.fill(0.0);
        return;
    }
    let ha = h.h.mul_vec(&face.normal);
    let lam = v / dot(&face.normal, &ha);
    for i in 0..y.len() {
        x[i] = y[i] - lam * ha[i];
        dk[i] = lam * face.normal[i];
    }
}

fn ball(center: &[f64], radius: f64, h: &mut PreparedOblique, y: &[f64], x: &mut [f64], dk: &mut [f64]) -> Result<(), StepError> {
    let m = y.len();
    let r: Vec<f64> = y.iter().zip(center).map(|(a, c)| a - c).collect();
    if dot(&r, &r) <= radius * radius {
        x.copy_from_slice(y);
        dk.fill(0.0);
        return Ok(());
    }
    // x − c = (I + λH)^{-1}(y − c) with |x − c| = R; then Δk = λ(x − c).
    let eig = h.eigen()?.clone();
    let w: Vec<f64> = (0..m).map(|j| (0..m).map(|i| eig.vectors[(i, j)] * r[i]).sum()).collect();
    let norm_at = |lam: f64| -> f64 {
        w.iter().zip(&eig.values).map(|(wi, li)| (wi / (1.0 + lam * li)).powi(2)).sum::<f64>().sqrt()
    };
    let mut lo = 0.0;
    let mut hi = (crate::linalg::norm(&w) / radius - 1.0) / eig.min();
    while norm_at(hi) > radius {
        hi *= 2.0;
    }
    let mut lam = 0.5 * (lo + hi);
    for _ in 0..200 {
        // Newton on 1/R − 1/|z(λ)|, which is concave and increasing.
        let nz = norm_at(lam);
        if nz > radius {
            lo = lam;
        } else {
            hi = lam;
        }
        let dnorm: f64 = -w
            .iter()
            .zip(&eig.values)
            .map(|(wi, li)| wi * wi * li / (1.0 + lam * li).powi(3))
            .sum::<f64>()
            / nz;
        let phi = 1.0 / radius - 1.0 / nz;
        let dphi = dnorm / (nz * nz);
        let mut next = lam - phi / dphi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - lam).abs() <= 1e-16 * lam.max(1e-300) || hi - lo <= 1e-16 * hi {
            lam = next;
            break;
        }
        lam = next;
    }
    let zs: Vec<f64> = w.iter().zip(&eig.values).map(|(wi, li)| wi / (1.0 + lam * li)).collect();
    let mut z: Vec<f64> = (0..m).map(|i| (0..m).map(|j| eig.vectors[(i, j)] * zs[j]).sum()).collect();
    let nz = crate::linalg::norm(&z);
    if nz > radius {
        z.iter_mut().for_each(|v| *v *= radius / nz);
    }
    for i in 0..m {
        x[i] = center[i] + z[i];
        dk[i] = lam * z[i];
    }
    Ok(())
}

fn boxed(
    lower: &[f64],
    upper: &[f64],
    h: &mut PreparedOblique,
    y: &[f64],
    x: &mut [f64],
    dk: &mut [f64],
) -> Result<(), StepError> {
    let m = y.len();
    let inside = (0..m).all(|i| y[i] >= lower[i] && y[i] <= upper[i]);
    if inside {
        x.copy_from_slice(y);
        dk.fill(0.0);
        return Ok(());
    }
    if h.diagonal {
        for i in 0..m {
            x[i] = y[i].clamp(lower[i], upper[i]);
            dk[i] = (y[i] - x[i]) / h.h[(i, i)];
        }
        return Ok(());
    }
    box_active_set(lower, upper, h, y, x)?;
    let r: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
    h.solve_into(&r, dk)
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Primal active-set method for `min ½(z − y)ᵀQ(z − y)` over the box,
/// `Q = H^{-1}`; iterates stay feasible and the objective never increases.
fn box_active_set(lower: &[f64], upper: &[f64], h: &mut PreparedOblique, y: &[f64], z: &mut [f64]) -> Result<(), StepError> {
    let m = y.len();
    let q = crate::linalg::inverse_spd(&h.h.symmetrized())?;
    let mut state = vec![Bound::Free; m];
    for i in 0..m {
        z[i] = y[i].clamp(lower[i], upper[i]);
        if y[i] < lower[i] {
            state[i] = Bound::Lower;
        } else if y[i] > upper[i] {
            state[i] = Bound::Upper;
        }
    }
    let max_iter = 50 * m + 100;
    let mut grad = vec![0.0; m];
    let mut diff = vec![0.0; m];
    for _ in 0..max_iter {
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == Bound::Free).collect();
        let fixed: Vec<usize> = (0..m).filter(|&i| state[i] != Bound::Free).collect();
        // Unconstrained minimizer over the free coordinates.
        let mut target = z.to_vec();
        if !free.is_empty() {
            let nf = free.len();
            let qff = Matrix::from_fn(nf, nf, |a, b| q[(free[a], free[b])]);
            let rhs: Vec<f64> = free
                .iter()
                .map(|&i| -fixed.iter().map(|&j| q[(i, j)] * (z[j] - y[j])).sum::<f64>())
                .collect();
            let l = cholesky(&qff)?;
            let mut sol = vec![0.0; nf];
            cholesky_solve(&l, &rhs, &mut sol);
            for (a, &i) in free.iter().enumerate() {
                target[i] = y[i] + sol[a];
            }
        }
        let step: f64 = free.iter().map(|&i| (target[i] - z[i]).abs()).fold(0.0, f64::max);
        let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if step <= 1e-14 * scale {
            for i in 0..m {
                diff[i] = z[i] - y[i];
            }
            q.mul_vec_into(&diff, &mut grad);
            // Optimal when every pinned coordinate pushes against its bound.
            let gscale = 1e-12 * (1.0 + grad.iter().map(|v| v.abs()).fold(0.0, f64::max));
            let mut worst: Option<(usize, f64)> = None;
            for &i in &fixed {
                let bad = match state[i] {
                    Bound::Lower => -grad[i],
                    Bound::Upper => grad[i],
                    Bound::Free => 0.0,
                };
                if bad > gscale && worst.is_none_or(|(_, w)| bad > w) {
                    worst = Some((i, bad));
                }
            }
            match worst {
                None => return Ok(()),
                Some((i, _)) => state[i] = Bound::Free,
            }
            continue;
        }
        // Ratio test towards the target.
        let mut alpha = 1.0;
        let mut block: Option<(usize, Bound)> = None;
        for &i in &free {
            let p = target[i] - z[i];
            if p < 0.0 && lower[i].is_finite() {
                let a = (lower[i] - z[i]) / p;
                if a < alpha {
                    alpha = a.max(0.0);
                    block = Some((i, Bound::Lower));
                }
            } else if p > 0.0 && upper[i].is_finite() {
                let a = (upper[i] - z[i]) / p;
                if a < alpha {
                    alpha = a.max(0.0);
                    block = Some((i, Bound::Upper));
                }
            }
        }
        for &i in &free {
            z[i] = (z[i] + alpha * (target[i] - z[i])).clamp(lower[i], upper[i]);
        }
        if let Some((i, b)) = block {
            state[i] = b;
            z[i] = if b == Bound::Lower { lower[i] } else { upper[i] };
        }
    }
    let residual: f64 = (0..m).map(|i| (z[i] - y[i]).abs()).fold(0.0, f64::max);
    Err(StepError::NoConvergence { residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::ConvexConstraint;

    fn half_plane() -> ConvexConstraint {
        ConvexConstraint::indicator(Geometry::HalfSpace(HalfSpace::lower_bound(2, 0, 0.0))).unwrap()
    }

    #[test]
    fn examples() {
        let c = half_plane();
        let (x, dk) = oblique_skorohod_step(&c, &Matrix::identity(2), &[-2.0, 3.0]).unwrap();
        assert_eq!((x, dk), (vec![0.0, 3.0], vec![-2.0, 0.0]));
        let (x, dk) = oblique_skorohod_step(&c, &Matrix::from_diag(&[2.0, 1.0]), &[-2.0, 3.0]).unwrap();
        assert_eq!((x, dk), (vec![0.0, 3.0], vec![-1.0, 0.0]));
        let (x, dk) = oblique_skorohod_step(&c, &Matrix::from_diag(&[2.0, 1.0]), &[1.0, 3.0]).unwrap();
        assert_eq!((x, dk), (vec![1.0, 3.0], vec![0.0, 0.0]));
    }

    /// Brute-force oracle: minimize the H^{-1}-metric distance over a grid.
    fn grid_oblique(g: &Geometry, h: &Matrix, y: &[f64]) -> Vec<f64> {
        let q = crate::linalg::inverse_spd(h).unwrap();
        let mut best = (f64::INFINITY, vec![0.0, 0.0]);
        let n = 800;
        for i in 0..=n {
            for j in 0..=n {
                let z = [-2.0 + 4.0 * i as f64 / n as f64, -2.0 + 4.0 * j as f64 / n as f64];
                if !g.contains(&z, 0.0) {
                    continue;
                }
                let d = [z[0] - y[0], z[1] - y[1]];
                let v = q.quadratic_form(&d);
                if v < best.0 {
                    best = (v, z.to_vec());
                }
            }
        }
        best.1
    }

    #[test]
    fn ball_and_box_match_grid_oracle() {
        let h = Matrix::from_rows(&[&[2.0, 0.7], &[0.7, 1.0]]);
        let geos = [
            Geometry::ball(vec![0.0, 0.0], 1.0),
            Geometry::boxed(vec![-1.0, -0.5], vec![1.0, 0.5]),
            Geometry::polytope(vec![
                HalfSpace::upper_bound(2, 0, 1.0),
                HalfSpace::upper_bound(2, 1, 1.0),
                HalfSpace::new(vec![1.0, 1.0], 1.5).unwrap(),
            ]),
        ];
        for g in &geos {
            let c = ConvexConstraint::indicator(g.clone()).unwrap();
            for y in [[1.8, 1.1], [-1.7, 0.2], [0.3, -1.9]] {
                let (x, dk) = oblique_skorohod_step(&c, &h, &y).unwrap();
                let oracle = grid_oblique(g, &h, &y);
                assert!(crate::linalg::dist(&x, &oracle) < 2e-2, "{g:?} {y:?}: {x:?} vs {oracle:?}");
                let hk = h.mul_vec(&dk);
                assert!((x[0] + hk[0] - y[0]).abs() < 1e-9 && (x[1] + hk[1] - y[1]).abs() < 1e-9);
                assert!(g.distance(&x) < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_smooth_constraint() {
        let c = ConvexConstraint::smooth(crate::convex::SmoothConvex::quadratic(Matrix::identity(1)).unwrap());
        assert_eq!(oblique_skorohod_step(&c, &Matrix::identity(1), &[1.0]), Err(StepError::NotIndicator));
    }
}

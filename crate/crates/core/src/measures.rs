//! Weighted empirical measures and exact Wasserstein-2 distances.

use std::io::{self, Write};
use std::sync::OnceLock;

use thiserror::Error;

use crate::io::{fmt_f64, indexed_columns, write_record};
use crate::linalg::dist_sq;
use crate::tol;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MeasureError {
    #[error("a measure needs at least one atom")]
    Empty,
    #[error("weights must be nonnegative and sum to 1 (sum = {sum})")]
    Weights { sum: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
}

/// Point cloud `Σ wᵢ δ_{xᵢ}` in `ℝ^m`; atoms are stored row-major.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    /// `None` means uniform.
    weights: Option<Vec<f64>>,
    second_moment: OnceLock<f64>,
    mean: OnceLock<Vec<f64>>,
}

impl PartialEq for EmpiricalMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.atoms == other.atoms && self.weights == other.weights
    }
}

impl EmpiricalMeasure {
    /// Uniform measure over the rows of `atoms`.
    pub fn uniform(dim: usize, atoms: Vec<f64>) -> Result<Self, MeasureError> {
        if dim == 0 || atoms.is_empty() || atoms.len() % dim != 0 {
            return Err(MeasureError::Empty);
        }
        Ok(Self { dim, atoms, weights: None, second_moment: OnceLock::new(), mean: OnceLock::new() })
    }

    pub fn weighted(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        let mut m = Self::uniform(dim, atoms)?;
        if weights.len() != m.len() {
            return Err(MeasureError::Dimension(weights.len(), m.len()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > tol::ARITHMETIC {
            return Err(MeasureError::Weights { sum });
        }
        m.weights = Some(weights);
        Ok(m)
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self, MeasureError> {
        let dim = points.first().ok_or(MeasureError::Empty)?.len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(MeasureError::Unsupported("points of mixed dimension".into()));
        }
        Self::uniform(dim, points.concat())
    }

    pub fn dirac(x: &[f64]) -> Self {
        Self::uniform(x.len(), x.to_vec()).expect("a Dirac measure needs a non-empty point")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.dim)
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    /// `∫|x|² μ(dx)`.
    pub fn second_moment(&self) -> f64 {
        *self.second_moment.get_or_init(|| {
            let sum: f64 = match &self.weights {
                None => self.atoms().map(|a| a.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / self.len() as f64,
                Some(w) => self.atoms().zip(w).map(|(a, wi)| wi * a.iter().map(|v| v * v).sum::<f64>()).sum(),
            };
            sum
        })
    }

    /// `W₂(μ, δ₀)`.
    pub fn w2_to_origin(&self) -> f64 {
        self.second_moment().sqrt()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.get_or_init(|| {
            let mut m = vec![0.0; self.dim];
            for (i, a) in self.atoms().enumerate() {
                let w = self.weight(i);
                for (mi, ai) in m.iter_mut().zip(a) {
                    *mi += w * ai;
                }
            }
            m
        })
    }

    /// One atom per row: `weight,x1..xm`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_record(w, std::iter::once("weight".to_string()).chain(indexed_columns("x", self.dim)))?;
        for (i, a) in self.atoms().enumerate() {
            write_record(w, std::iter::once(fmt_f64(self.weight(i))).chain(a.iter().map(|v| fmt_f64(*v))))?;
        }
        Ok(())
    }
}

/// Exact `W₂(μ, ν)`.
///
/// One-dimensional measures (any weights) use quantile matching; a Dirac on
/// either side has a closed form; otherwise both measures must be uniform
/// with the same number of atoms and the optimal assignment is computed.
pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    if mu.dim != nu.dim {
        return Err(MeasureError::Dimension(mu.dim, nu.dim));
    }
    if mu.dim == 1 {
        return wasserstein2_sorted(mu, nu);
    }
    if nu.len() == 1 {
        return Ok(to_point(mu, nu.atom(0)));
    }
    if mu.len() == 1 {
        return Ok(to_point(nu, mu.atom(0)));
    }
    wasserstein2_assignment(mu, nu)
}

fn to_point(mu: &EmpiricalMeasure, p: &[f64]) -> f64 {
    mu.atoms().enumerate().map(|(i, a)| mu.weight(i) * dist_sq(a, p)).sum::<f64>().sqrt()
}

/// `W₂` between uniform measures with equal atom counts via the Hungarian
/// algorithm on squared distances.
pub fn wasserstein2_assignment(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    if mu.dim != nu.dim {
        return Err(MeasureError::Dimension(mu.dim, nu.dim));
    }
    if !(mu.is_uniform() && nu.is_uniform()) || mu.len() != nu.len() {
        return Err(MeasureError::Unsupported(
            "assignment needs uniform weights and equal atom counts".into(),
        ));
    }
    let n = mu.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = dist_sq(mu.atom(i), nu.atom(j));
        }
    }
    let assign = hungarian(&cost, n);
    let total: f64 = (0..n).map(|i| cost[i * n + assign[i]]).sum();
    Ok((total / n as f64).sqrt())
}

/// Minimum-cost perfect matching on an `n × n` row-major cost matrix;
/// returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // Shortest augmenting paths with row/column potentials; index 0 is a
    // sentinel so rows and columns are 1-based inside the loop.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// One-dimensional `W₂` by matching quantile functions; weights arbitrary.
pub fn wasserstein2_sorted(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    if mu.dim != 1 || nu.dim != 1 {
        return Err(MeasureError::Unsupported("quantile matching is one-dimensional".into()));
    }
    let sorted = |m: &EmpiricalMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| m.atoms[a].total_cmp(&m.atoms[b]));
        idx.into_iter().map(|i| (m.atoms[i], m.weight(i))).collect::<Vec<_>>()
    };
    let a = sorted(mu);
    let b = sorted(nu);
    if mu.is_uniform() && nu.is_uniform() && a.len() == b.len() {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x.0 - y.0) * (x.0 - y.0)).sum();
        return Ok((total / a.len() as f64).sqrt());
    }
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let mass = ra.min(rb);
        total += mass * (a[i].0 - b[j].0).powi(2);
        ra -= mass;
        rb -= mass;
        if ra <= 0.0 {
            i += 1;
            ra = a.get(i).map_or(0.0, |p| p.1);
        }
        if rb <= 0.0 {
            j += 1;
            rb = b.get(j).map_or(0.0, |p| p.1);
        }
    }
    Ok(total.sqrt())
}

/// Monte-Carlo estimate of `E sup_t |x(t)|²` over every path of an ensemble.
pub fn second_moment_sup(ensemble: &crate::path::Ensemble) -> Result<f64, MeasureError> {
    if ensemble.is_empty() {
        return Err(MeasureError::EmptyEnsemble);
    }
    let total: f64 = ensemble.paths().map(|p| p.sup_norm_sq()).sum();
    Ok(total / ensemble.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
        let n = mu.len();
        let best = permutations(n)
            .into_iter()
            .map(|p| (0..n).map(|i| dist_sq(mu.atom(i), nu.atom(p[i]))).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        (best / n as f64).sqrt()
    }

    fn random_measure(dim: usize, n: usize, rng: &mut ChaCha8Rng) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(dim, (0..dim * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn examples() {
        let a = EmpiricalMeasure::dirac(&[1.0, 2.0]);
        let b = EmpiricalMeasure::dirac(&[4.0, 6.0]);
        assert_eq!(wasserstein2(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein2(&a, &b).unwrap(), 5.0);
        let mu = EmpiricalMeasure::uniform(1, vec![0.0, 2.0]).unwrap();
        let nu = EmpiricalMeasure::uniform(1, vec![1.0, 3.0]).unwrap();
        assert_eq!(wasserstein2(&mu, &nu).unwrap(), 1.0);
        assert_eq!(EmpiricalMeasure::dirac(&[3.0, 4.0]).w2_to_origin(), 5.0);
        assert_eq!(EmpiricalMeasure::uniform(1, vec![1.0, -1.0]).unwrap().w2_to_origin(), 1.0);
        assert_eq!(EmpiricalMeasure::dirac(&[0.0, 0.0]).w2_to_origin(), 0.0);
    }

    #[test]
    fn hungarian_matches_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..300 {
            let n = 1 + trial % 6;
            let dim = 1 + trial % 3;
            let mu = random_measure(dim, n, &mut rng);
            let nu = random_measure(dim, n, &mut rng);
            assert_eq!(wasserstein2_assignment(&mu, &nu).unwrap(), brute_force(&mu, &nu));
        }
    }

    #[test]
    fn weighted_one_dimensional() {
        // Mass 1/2 at 0 and 1/2 at 1 versus a Dirac at 1/2: W₂ = 1/2.
        let mu = EmpiricalMeasure::uniform(1, vec![0.0, 1.0]).unwrap();
        let nu = EmpiricalMeasure::dirac(&[0.5]);
        assert!((wasserstein2(&mu, &nu).unwrap() - 0.5).abs() < 1e-15);
        // Weights (1/4, 3/4) at (0, 1) vs uniform at (0, 1): move 1/4 from 1 to 0.
        let w = EmpiricalMeasure::weighted(1, vec![0.0, 1.0], vec![0.25, 0.75]).unwrap();
        assert!((wasserstein2(&w, &mu).unwrap() - 0.5).abs() < 1e-15);
        assert!(EmpiricalMeasure::weighted(1, vec![0.0], vec![0.5]).is_err());
    }

    #[test]
    fn multi_d_needs_equal_sizes() {
        let mu = EmpiricalMeasure::uniform(2, vec![0.0; 4]).unwrap();
        let nu = EmpiricalMeasure::uniform(2, vec![0.0; 6]).unwrap();
        assert!(matches!(wasserstein2(&mu, &nu), Err(MeasureError::Unsupported(_))));
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        EmpiricalMeasure::dirac(&[1.0, -0.5]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("weight,x1,x2"));
        assert_eq!(text.lines().count(), 2);
    }
}

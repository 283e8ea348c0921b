//! Discrete records of constrained trajectories `(x, k, ↕k↕, U)`.

use std::io::{self, Write};
use std::sync::Arc;

use crate::io::{fmt_f64, indexed_columns, write_record};
use crate::linalg::{dist_sq, norm};

/// One particle's trajectory on a time grid.
///
/// `k` is the cumulative reflection, `variation` its running total
/// variation, and `density[j] = Δk_j / h_j` the per-step rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedPath {
    dim: usize,
    times: Arc<[f64]>,
    states: Vec<f64>,
    reflection: Vec<f64>,
    variation: Vec<f64>,
    density: Vec<f64>,
}

impl ConstrainedPath {
    pub fn new(times: Arc<[f64]>, x0: &[f64]) -> Self {
        let dim = x0.len();
        let cap = times.len();
        let mut states = Vec::with_capacity(cap * dim);
        states.extend_from_slice(x0);
        let mut reflection = Vec::with_capacity(cap * dim);
        reflection.extend(std::iter::repeat_n(0.0, dim));
        let mut variation = Vec::with_capacity(cap);
        variation.push(0.0);
        Self { dim, times, states, reflection, variation, density: Vec::with_capacity((cap.max(1) - 1) * dim) }
    }

    /// Constant path with no reflection.
    pub fn constant(times: Arc<[f64]>, x: &[f64]) -> Self {
        let mut p = Self::new(times.clone(), x);
        let dk = vec![0.0; x.len()];
        for _ in 1..times.len() {
            p.push(x, &dk);
        }
        p
    }

    /// Appends the next node given the new state and the reflection
    /// increment of the step that produced it.
    pub fn push(&mut self, x: &[f64], dk: &[f64]) {
        let j = self.variation.len();
        assert!(j < self.times.len(), "path already spans the grid");
        let h = self.times[j] - self.times[j - 1];
        let base = (j - 1) * self.dim;
        self.states.extend_from_slice(x);
        for (i, d) in dk.iter().enumerate() {
            let prev = self.reflection[base + i];
            self.reflection.push(prev + d);
            self.density.push(d / h);
        }
        let last = self.variation[j - 1];
        self.variation.push(last + norm(dk));
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times[..self.variation.len()]
    }

    pub fn shared_times(&self) -> Arc<[f64]> {
        self.times.clone()
    }

    pub fn nodes(&self) -> usize {
        self.variation.len()
    }

    pub fn is_complete(&self) -> bool {
        self.variation.len() == self.times.len()
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn reflection(&self, j: usize) -> &[f64] {
        &self.reflection[j * self.dim..(j + 1) * self.dim]
    }

    /// `Δk` of step `j` (from node `j` to `j + 1`).
    pub fn increment(&self, j: usize) -> Vec<f64> {
        let a = self.reflection(j);
        let b = self.reflection(j + 1);
        b.iter().zip(a).map(|(p, q)| p - q).collect()
    }

    pub fn variation(&self, j: usize) -> f64 {
        self.variation[j]
    }

    pub fn density(&self, j: usize) -> &[f64] {
        &self.density[j * self.dim..(j + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.nodes() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// `sup_t |x(t)|²`.
    pub fn sup_norm_sq(&self) -> f64 {
        self.states().map(|x| x.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max)
    }

    /// `sup_t |x(t) − y(t)|²` over common nodes.
    pub fn sup_dist_sq(&self, other: &ConstrainedPath) -> f64 {
        self.states().zip(other.states()).map(|(a, b)| dist_sq(a, b)).fold(0.0, f64::max)
    }
}

/// Paths ordered by `(replication, particle)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: usize,
    paths: Vec<ConstrainedPath>,
}

impl Ensemble {
    pub fn new(particles: usize, paths: Vec<ConstrainedPath>) -> Self {
        assert!(particles > 0 && paths.len() % particles == 0, "ensemble must hold whole replications");
        Self { particles, paths }
    }

    pub fn from_replications(reps: Vec<Vec<ConstrainedPath>>) -> Self {
        let particles = reps.first().map_or(1, |r| r.len().max(1));
        Self::new(particles, reps.into_iter().flatten().collect())
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn replications(&self) -> usize {
        self.paths.len() / self.particles
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &ConstrainedPath> {
        self.paths.iter()
    }

    pub fn path(&self, replication: usize, particle: usize) -> &ConstrainedPath {
        &self.paths[replication * self.particles + particle]
    }

    pub fn replication(&self, r: usize) -> &[ConstrainedPath] {
        &self.paths[r * self.particles..(r + 1) * self.particles]
    }

    pub fn into_paths(self) -> Vec<ConstrainedPath> {
        self.paths
    }

    /// Rows `(replication, particle, t, x_1..x_m, k_1..k_m, variation)`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let m = self.paths.first().map_or(0, ConstrainedPath::dim);
        let header = ["replication", "particle", "t"]
            .into_iter()
            .map(String::from)
            .chain(indexed_columns("x", m))
            .chain(indexed_columns("k", m))
            .chain(std::iter::once("variation".to_string()));
        write_record(w, header)?;
        for (idx, p) in self.paths.iter().enumerate() {
            let rep = (idx / self.particles).to_string();
            let part = (idx % self.particles).to_string();
            for j in 0..p.nodes() {
                let row = [rep.clone(), part.clone(), fmt_f64(p.times[j])]
                    .into_iter()
                    .chain(p.state(j).iter().map(|v| fmt_f64(*v)))
                    .chain(p.reflection(j).iter().map(|v| fmt_f64(*v)))
                    .chain(std::iter::once(fmt_f64(p.variation(j))));
                write_record(w, row)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(n: usize) -> Arc<[f64]> {
        (0..=n).map(|j| j as f64 / n as f64).collect()
    }

    #[test]
    fn accumulates_reflection() {
        let mut p = ConstrainedPath::new(times(3), &[0.0]);
        p.push(&[0.1], &[0.5]);
        p.push(&[0.2], &[-0.25]);
        p.push(&[0.3], &[0.0]);
        assert!(p.is_complete());
        assert_eq!(p.reflection(3), &[0.25]);
        assert_eq!(p.variation(3), 0.75);
        assert!((p.density(0)[0] - 1.5).abs() < 1e-12);
        assert!(p.variation(3) - p.variation(0) >= p.reflection(3)[0].abs());
        assert_eq!(p.increment(1), vec![-0.25]);
    }

    #[test]
    fn constant_paths_and_moments() {
        let p = ConstrainedPath::constant(times(4), &[3.0, 4.0]);
        assert_eq!(p.sup_norm_sq(), 25.0);
        assert_eq!(p.variation(4), 0.0);
        let q = ConstrainedPath::constant(times(4), &[-3.0, -4.0]);
        let e = Ensemble::new(1, vec![p.clone(), q]);
        assert_eq!(crate::measures::second_moment_sup(&e).unwrap(), 25.0);
        assert_eq!(p.sup_dist_sq(&p), 0.0);
        assert!(crate::measures::second_moment_sup(&Ensemble::new(1, vec![])).is_err());
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let e = Ensemble::new(2, vec![ConstrainedPath::constant(times(2), &[1.0]); 4]);
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "replication,particle,t,x1,k1,variation");
        assert_eq!(text.lines().count(), 1 + 4 * 3);
        assert!(text.lines().last().unwrap().starts_with("1,1,"));
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{run_lockstep, Frozen, Scheme, Stepper};
use super::{NoiseSource, ParticleNoise, SolverError, TimeGrid};
use crate::dynamics::System;
use crate::linalg::dist_sq;
use crate::path::{ConstrainedPath, Ensemble};

/// Dyadic level used by each iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LevelSchedule {
    Fixed { level: u32 },
    /// Iterate `j` (1-based) uses level `start + j − 1`.
    Refining { start: u32 },
}

impl LevelSchedule {
    pub fn level(&self, iterate: usize) -> u32 {
        match *self {
            LevelSchedule::Fixed { level } => level,
            LevelSchedule::Refining { start } => start + iterate.saturating_sub(1) as u32,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerIterationReport {
    pub levels: Vec<u32>,
    /// `E sup_t |x^{j+1}(t) − x^j(t)|²` for `j = 0..iterations`, with
    /// `x⁰ ≡ x₀`.
    pub mean_sup_dist_sq: Vec<f64>,
    /// Largest pathwise `sup_t |x^{j+1} − x^j|` over particles.
    pub max_sup_dist: Vec<f64>,
    #[serde(skip)]
    pub iterates: Vec<Ensemble>,
}

/// Picard-type iteration: iterate `j` solves the projected scheme with
/// `f`, `g`, `H` frozen at iterate `j − 1` evaluated at the dyadic snap of
/// the current time. All iterates share the Brownian increments.
pub fn euler_iteration(
    system: &System,
    grid: &TimeGrid,
    particles: usize,
    replications: usize,
    noise: &NoiseSource,
    iterations: usize,
    levels: LevelSchedule,
    keep_paths: bool,
) -> Result<EulerIterationReport, SolverError> {
    if iterations == 0 || replications == 0 {
        return Err(SolverError::Config("need at least one iterate and one replication".into()));
    }
    let per_rep = (0..replications)
        .into_par_iter()
        .map(|r| iterate_replication(system, grid, particles, noise, r, iterations, levels, keep_paths))
        .collect::<Result<Vec<_>, _>>()?;
    let total = (replications * particles) as f64;
    let mut mean = vec![0.0; iterations];
    let mut max = vec![0.0_f64; iterations];
    for (dists, _) in &per_rep {
        for (j, row) in dists.iter().enumerate() {
            mean[j] += row.iter().sum::<f64>() / total;
            max[j] = max[j].max(row.iter().cloned().fold(0.0, f64::max).sqrt());
        }
    }
    let iterates = if keep_paths {
        (0..iterations)
            .map(|j| Ensemble::from_replications(per_rep.iter().map(|(_, paths)| paths[j].clone()).collect()))
            .collect()
    } else {
        vec![]
    };
    Ok(EulerIterationReport {
        levels: (1..=iterations).map(|j| levels.level(j)).collect(),
        mean_sup_dist_sq: mean,
        max_sup_dist: max,
        iterates,
    })
}

type IterateOutput = (Vec<Vec<f64>>, Vec<Vec<ConstrainedPath>>);

#[allow(clippy::too_many_arguments)]
fn iterate_replication(
    system: &System,
    grid: &TimeGrid,
    particles: usize,
    noise: &NoiseSource,
    replication: usize,
    iterations: usize,
    levels: LevelSchedule,
    keep_paths: bool,
) -> Result<IterateOutput, SolverError> {
    let m = system.dim();
    let block = particles * m;
    let nodes = grid.steps + 1;
    let mut prev = system.initial.repeat(particles * nodes);
    let mut dists = Vec::with_capacity(iterations);
    let mut kept = Vec::new();
    let times = grid.nodes();
    for j in 1..=iterations {
        let frozen = Frozen::new(std::mem::take(&mut prev), levels.level(j));
        let stepper = Stepper::new(system, Scheme::Projected, *grid, particles, replication, None)?.freeze(frozen);
        let mut pn = ParticleNoise::new(noise, replication, particles, system.noise_dim(), grid)?;
        let mut cur = Vec::with_capacity(block * nodes);
        cur.extend_from_slice(stepper.states());
        let mut paths: Vec<ConstrainedPath> = if keep_paths {
            (0..particles).map(|_| ConstrainedPath::new(times.clone(), &system.initial)).collect()
        } else {
            vec![]
        };
        let mut steppers = [stepper];
        run_lockstep(&mut steppers, &mut pn, |s| {
            cur.extend_from_slice(s[0].states());
            for (i, p) in paths.iter_mut().enumerate() {
                p.push(s[0].state(i), &s[0].last_increments()[i * m..(i + 1) * m]);
            }
            Ok(())
        })?;
        let [stepper] = steppers;
        let old = stepper_prev(stepper);
        let mut sup = vec![0.0_f64; particles];
        for node in 0..nodes {
            for (i, s) in sup.iter_mut().enumerate() {
                let at = node * block + i * m;
                *s = s.max(dist_sq(&cur[at..at + m], &old[at..at + m]));
            }
        }
        dists.push(sup);
        if keep_paths {
            kept.push(paths);
        }
        prev = cur;
    }
    Ok((dists, kept))
}

fn stepper_prev(stepper: Stepper<'_>) -> Vec<f64> {
    stepper.into_frozen().map(|f| f.prev).unwrap_or_default()
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::skorohod::{skorohod_into, PreparedOblique};
use super::{dyadic_snap, NoiseSource, ParticleNoise, SolverError, TimeGrid};
use crate::convex::{ConvexConstraint, Geometry};
use crate::dynamics::System;
use crate::linalg::{norm, Matrix};
use crate::measures::EmpiricalMeasure;
use crate::path::{ConstrainedPath, Ensemble};

/// States beyond this norm abort the run.
pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Scheme {
    /// Free Euler step followed by an oblique Skorohod step.
    Projected,
    /// Explicit Euler on `dx + H∇Π_ε(x)dt = f dt + g dB`.
    Penalized { epsilon: f64 },
}

/// Largest step allowed for the explicit penalized scheme: `ε/(2 b_H)`.
pub fn penalized_step_bound(epsilon: f64, b_h: f64) -> f64 {
    epsilon / (2.0 * b_h)
}

/// Piecewise-constant control: `values[j]` is used on
/// `[switch_times[j-1], switch_times[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    switch_times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn constant(u: Vec<f64>) -> Self {
        Self { switch_times: vec![], values: vec![u] }
    }

    pub fn new(switch_times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, SolverError> {
        if values.len() != switch_times.len() + 1 {
            return Err(SolverError::Config("a schedule needs one more value than switch times".into()));
        }
        if switch_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SolverError::Config("switch times must be strictly increasing".into()));
        }
        Ok(Self { switch_times, values })
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        let j = self.switch_times.partition_point(|s| *s <= t + 1e-12);
        &self.values[j]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }
}

/// Coefficients frozen at a previous iterate, refreshed whenever the
/// dyadic snap of the current time changes.
#[derive(Debug, Clone)]
pub(crate) struct Frozen {
    /// Previous iterate, node-major: `(steps + 1) × particles × m`.
    pub prev: Vec<f64>,
    pub level: u32,
    node: Option<usize>,
    f: Vec<f64>,
    g: Vec<f64>,
    h: Vec<PreparedOblique>,
}

impl Frozen {
    pub fn new(prev: Vec<f64>, level: u32) -> Self {
        Self { prev, level, node: None, f: vec![], g: vec![], h: vec![] }
    }
}

/// Advances all particles of one replication by one grid step at a time.
pub struct Stepper<'a> {
    system: &'a System,
    geometry: Option<&'a Geometry>,
    scheme: Scheme,
    grid: TimeGrid,
    control: Option<&'a ControlSchedule>,
    frozen: Option<Frozen>,
    replication: usize,
    n: usize,
    m: usize,
    d: usize,
    step: usize,
    x: Vec<f64>,
    x_next: Vec<f64>,
    k: Vec<f64>,
    variation: Vec<f64>,
    dk_last: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    hbuf: Matrix,
    shared: PreparedOblique,
    free: Vec<f64>,
    grad: Vec<f64>,
    hgrad: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        system: &'a System,
        scheme: Scheme,
        grid: TimeGrid,
        particles: usize,
        replication: usize,
        control: Option<&'a ControlSchedule>,
    ) -> Result<Self, SolverError> {
        let x0 = system.initial.clone();
        Self::with_initial(system, scheme, grid, particles, replication, control, &x0.repeat(particles.max(1)))
    }

    /// Starts every particle from its own state (`particles × m`).
    pub fn with_initial(
        system: &'a System,
        scheme: Scheme,
        grid: TimeGrid,
        particles: usize,
        replication: usize,
        control: Option<&'a ControlSchedule>,
        initial: &[f64],
    ) -> Result<Self, SolverError> {
        let m = system.dim();
        let d = system.noise_dim();
        if particles == 0 {
            return Err(SolverError::Config("at least one particle is required".into()));
        }
        if initial.len() != particles * m {
            return Err(SolverError::Config("initial states do not match particles × dimension".into()));
        }
        let geometry = match (&scheme, &system.constraint) {
            (Scheme::Projected, ConvexConstraint::Indicator(g)) => Some(g),
            (Scheme::Projected, _) => {
                return Err(SolverError::Config("the projected scheme needs an indicator constraint".into()))
            }
            (Scheme::Penalized { epsilon }, _) => {
                if !(*epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(SolverError::Config(format!("epsilon must be positive, got {epsilon}")));
                }
                let bound = penalized_step_bound(*epsilon, system.oblique.b_h());
                if grid.h() > bound * (1.0 + 1e-12) {
                    return Err(SolverError::Unstable { h: grid.h(), bound });
                }
                None
            }
        };
        let mut hbuf = Matrix::zeros(m, m);
        let mu0 = EmpiricalMeasure::dirac(&system.initial);
        system.oblique.eval_into(grid.start, &system.initial, &mu0, &mut hbuf);
        Ok(Self {
            system,
            geometry,
            scheme,
            grid,
            control,
            frozen: None,
            replication,
            n: particles,
            m,
            d,
            step: 0,
            x: initial.to_vec(),
            x_next: initial.to_vec(),
            k: vec![0.0; particles * m],
            variation: vec![0.0; particles],
            dk_last: vec![0.0; particles * m],
            f: vec![0.0; m],
            g: vec![0.0; m * d],
            shared: PreparedOblique::new(hbuf.clone()),
            hbuf,
            free: vec![0.0; m],
            grad: vec![0.0; m],
            hgrad: vec![0.0; m],
        })
    }

    pub(crate) fn freeze(mut self, frozen: Frozen) -> Self {
        self.frozen = Some(frozen);
        self
    }

    pub(crate) fn into_frozen(self) -> Option<Frozen> {
        self.frozen
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.grid.node(self.step)
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.grid.steps
    }

    pub fn states(&self) -> &[f64] {
        &self.x
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.x[i * self.m..(i + 1) * self.m]
    }

    pub fn reflection(&self) -> &[f64] {
        &self.k
    }

    pub fn variation(&self) -> &[f64] {
        &self.variation
    }

    /// `Δk` of the most recent step, `particles × m`.
    pub fn last_increments(&self) -> &[f64] {
        &self.dk_last
    }

    pub fn measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.m, self.x.clone()).expect("non-empty particle set")
    }

    fn refresh_frozen(&mut self, t: f64, u: &[f64]) {
        let (m, d, n) = (self.m, self.d, self.n);
        let frozen = self.frozen.as_mut().expect("called with frozen coefficients");
        let snap = dyadic_snap(t, frozen.level).max(self.grid.start);
        let node = self.grid.floor_index(snap);
        if frozen.node == Some(node) {
            return;
        }
        let ts = self.grid.node(node);
        let block = &frozen.prev[node * n * m..(node + 1) * n * m];
        let mu = EmpiricalMeasure::uniform(m, block.to_vec()).expect("non-empty particle set");
        frozen.f.resize(n * m, 0.0);
        frozen.g.resize(n * m * d, 0.0);
        frozen.h.clear();
        let mut hbuf = Matrix::zeros(m, m);
        for i in 0..n {
            let xi = &block[i * m..(i + 1) * m];
            let coeffs = &self.system.coefficients;
            coeffs.drift_into(ts, xi, &mu, u, &mut frozen.f[i * m..(i + 1) * m]);
            coeffs.diffusion_into(ts, xi, &mu, u, &mut frozen.g[i * m * d..(i + 1) * m * d]);
            self.system.oblique.eval_into(ts, xi, &mu, &mut hbuf);
            frozen.h.push(PreparedOblique::new(hbuf.clone()));
        }
        frozen.node = Some(node);
    }

    /// One step with Brownian increments `dw` (`particles × d`).
    pub fn advance(&mut self, dw: &[f64]) -> Result<(), SolverError> {
        if self.is_done() {
            return Err(SolverError::Config("stepper already reached the end of its grid".into()));
        }
        let (m, d, n) = (self.m, self.d, self.n);
        let t = self.grid.node(self.step);
        let h = self.grid.h();
        let empty: &[f64] = &[];
        let u = self.control.map_or(empty, |c| c.value_at(t));
        let mu = if self.frozen.is_some() {
            self.refresh_frozen(t, u);
            None
        } else {
            Some(self.measure())
        };
        let oblique = &self.system.oblique;
        let state_h = oblique.is_state_dependent();
        if self.frozen.is_none() && !state_h && !oblique.is_constant() {
            oblique.eval_into(t, &self.x[..m], mu.as_ref().expect("measure built"), &mut self.hbuf);
            self.shared.reset(&self.hbuf);
        }
        for i in 0..n {
            let xi = &self.x[i * m..(i + 1) * m];
            let prepared: &mut PreparedOblique = if let Some(fr) = self.frozen.as_mut() {
                self.f.copy_from_slice(&fr.f[i * m..(i + 1) * m]);
                self.g.copy_from_slice(&fr.g[i * m * d..(i + 1) * m * d]);
                &mut fr.h[i]
            } else {
                let mu = mu.as_ref().expect("measure built");
                let coeffs = &self.system.coefficients;
                coeffs.drift_into(t, xi, mu, u, &mut self.f);
                coeffs.diffusion_into(t, xi, mu, u, &mut self.g);
                if state_h {
                    oblique.eval_into(t, xi, mu, &mut self.hbuf);
                    self.shared.reset(&self.hbuf);
                }
                &mut self.shared
            };
            let dwi = &dw[i * d..(i + 1) * d];
            for r in 0..m {
                let noise: f64 = (0..d).map(|c| self.g[r * d + c] * dwi[c]).sum();
                self.free[r] = xi[r] + h * self.f[r] + noise;
            }
            let xn = &mut self.x_next[i * m..(i + 1) * m];
            let dk = &mut self.dk_last[i * m..(i + 1) * m];
            match self.scheme {
                Scheme::Penalized { epsilon } => {
                    self.system.constraint.yosida_gradient_into(epsilon, xi, &mut self.grad)?;
                    prepared.matrix().mul_vec_into(&self.grad, &mut self.hgrad);
                    for r in 0..m {
                        xn[r] = self.free[r] - h * self.hgrad[r];
                        dk[r] = h * self.grad[r];
                    }
                }
                Scheme::Projected => {
                    let geometry = self.geometry.expect("projected scheme has a geometry");
                    skorohod_into(geometry, prepared, &self.free, xn, dk)
                        .map_err(|source| SolverError::Step { step: self.step, source })?;
                }
            }
            let size = norm(xn);
            if !(size <= DIVERGENCE_BOUND) {
                return Err(SolverError::Divergence { step: self.step, replication: self.replication, particle: i });
            }
            for r in 0..m {
                self.k[i * m + r] += dk[r];
            }
            self.variation[i] += norm(dk);
        }
        std::mem::swap(&mut self.x, &mut self.x_next);
        self.step += 1;
        Ok(())
    }
}

/// Runs steppers sharing one replication's Brownian increments to the end
/// of their (common) grid, calling `after_step` after every step.
pub fn run_lockstep(
    steppers: &mut [Stepper<'_>],
    noise: &mut ParticleNoise,
    mut after_step: impl FnMut(&[Stepper<'_>]) -> Result<(), SolverError>,
) -> Result<(), SolverError> {
    let Some(first) = steppers.first() else { return Ok(()) };
    let steps = first.grid.steps;
    let mut dw = vec![0.0; first.n * first.d];
    for _ in 0..steps {
        noise.fill(&mut dw);
        for s in steppers.iter_mut() {
            s.advance(&dw)?;
        }
        after_step(steppers)?;
    }
    Ok(())
}

/// Full paths of one replication.
pub fn simulate_replication(
    system: &System,
    scheme: Scheme,
    grid: &TimeGrid,
    particles: usize,
    noise: &NoiseSource,
    replication: usize,
    control: Option<&ControlSchedule>,
) -> Result<Vec<ConstrainedPath>, SolverError> {
    let mut stepper = Stepper::new(system, scheme, *grid, particles, replication, control)?;
    let mut pn = ParticleNoise::new(noise, replication, particles, system.noise_dim(), grid)?;
    let times = grid.nodes();
    let m = system.dim();
    let mut paths: Vec<ConstrainedPath> = (0..particles).map(|_| ConstrainedPath::new(times.clone(), &system.initial)).collect();
    run_lockstep(std::slice::from_mut(&mut stepper), &mut pn, |s| {
        let s = &s[0];
        for (i, p) in paths.iter_mut().enumerate() {
            p.push(s.state(i), &s.last_increments()[i * m..(i + 1) * m]);
        }
        Ok(())
    })?;
    Ok(paths)
}

/// Replications run in parallel; the result is ordered by
/// `(replication, particle)` and independent of the thread count.
pub fn simulate(
    system: &System,
    scheme: Scheme,
    grid: &TimeGrid,
    particles: usize,
    replications: usize,
    noise: &NoiseSource,
    control: Option<&ControlSchedule>,
) -> Result<Ensemble, SolverError> {
    if replications == 0 {
        return Err(SolverError::Config("at least one replication is required".into()));
    }
    let reps = (0..replications)
        .into_par_iter()
        .map(|r| simulate_replication(system, scheme, grid, particles, noise, r, control))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ensemble::from_replications(reps))
}

pub fn simulate_penalized(
    system: &System,
    epsilon: f64,
    grid: &TimeGrid,
    particles: usize,
    replications: usize,
    noise: &NoiseSource,
) -> Result<Ensemble, SolverError> {
    simulate(system, Scheme::Penalized { epsilon }, grid, particles, replications, noise, None)
}

pub fn simulate_projected(
    system: &System,
    grid: &TimeGrid,
    particles: usize,
    replications: usize,
    noise: &NoiseSource,
) -> Result<Ensemble, SolverError> {
    simulate(system, Scheme::Projected, grid, particles, replications, noise, None)
}

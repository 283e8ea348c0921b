//! Optimal control over piecewise-constant controls: cost and value
//! estimation, the dynamic programming residual, and convergence-rate
//! probes for the penalized scheme.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{CostField, DynamicsError, System};
use crate::linalg::{dist_sq, norm};
use crate::path::Ensemble;
use crate::solver::{run_lockstep, ControlSchedule, NoiseSource, ParticleNoise, Scheme, SolverError, Stepper, TimeGrid};
use crate::stats::{linear_fit, mean, stderr, LinearFit};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControlError {
    #[error("invalid control configuration: {0}")]
    Config(String),
    #[error("nested simulation needs {required} particle-steps, budget is {limit}")]
    Budget { required: u128, limit: u128 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Largest control family `|U|^{switches+1}` that will be enumerated.
pub const MAX_CONTROL_FAMILY: u128 = 100_000;

#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub system: System,
    pub costs: CostField,
    pub controls: Vec<Vec<f64>>,
    pub horizon: (f64, f64),
}

impl ControlProblem {
    pub fn new(system: System, costs: CostField, controls: Vec<Vec<f64>>, horizon: (f64, f64)) -> Result<Self, ControlError> {
        if controls.is_empty() {
            return Err(ControlError::Config("the control set is empty".into()));
        }
        let k = system.coefficients.control_dim();
        if let Some(u) = controls.iter().find(|u| u.len() != k) {
            return Err(ControlError::Config(format!("control {u:?} does not have dimension {k}")));
        }
        if system.oblique.is_state_dependent() {
            return Err(ControlError::Config("controlled systems need H to depend on time only".into()));
        }
        if !(horizon.0 < horizon.1 && horizon.0.is_finite() && horizon.1.is_finite()) {
            return Err(ControlError::Config(format!("invalid horizon {horizon:?}")));
        }
        costs.check_normalization(system.dim(), &controls)?;
        Ok(Self { system, costs, controls, horizon })
    }

    /// Same problem started from `x` at time `s`.
    pub fn restarted(&self, s: f64, x: Vec<f64>) -> Result<Self, ControlError> {
        let s2 = &self.system;
        let system = System::new(s2.name.clone(), s2.coefficients.clone(), s2.oblique.clone(), s2.constraint.clone(), x)?;
        Self::new(system, self.costs.clone(), self.controls.clone(), (s, self.horizon.1))
    }

    pub fn with_controls(&self, controls: Vec<Vec<f64>>) -> Result<Self, ControlError> {
        Self::new(self.system.clone(), self.costs.clone(), controls, self.horizon)
    }

    pub fn with_costs(&self, costs: CostField) -> Result<Self, ControlError> {
        Self::new(self.system.clone(), costs, self.controls.clone(), self.horizon)
    }
}

/// Monte Carlo settings shared by the control operations.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    /// Target step; each horizon uses the nearest whole number of steps.
    pub dt: f64,
    pub particles: usize,
    pub replications: usize,
    pub seed: u64,
    /// Interior switch times of the piecewise-constant controls.
    pub switches: usize,
    /// Representative `x(τ)` states for the nested value estimates.
    pub clusters: usize,
    /// Limit on particle-steps spent in nested simulations.
    pub nested_budget: u128,
}

impl SimConfig {
    pub fn new(dt: f64, particles: usize, replications: usize, seed: u64) -> Self {
        Self { dt, particles, replications, seed, switches: 0, clusters: 8, nested_budget: 20_000_000_000 }
    }

    pub fn grid(&self, horizon: (f64, f64)) -> Result<TimeGrid, ControlError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ControlError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let steps = ((horizon.1 - horizon.0) / self.dt).round().max(1.0) as usize;
        Ok(TimeGrid::new(horizon.0, horizon.1, steps)?)
    }

    fn check(&self) -> Result<(), ControlError> {
        if self.particles == 0 || self.replications == 0 {
            return Err(ControlError::Config("particles and replications must be positive".into()));
        }
        Ok(())
    }
}

/// Trapezoidal running cost plus terminal cost for one path.
fn path_cost(p: &crate::path::ConstrainedPath, schedule: &ControlSchedule, costs: &CostField) -> f64 {
    let t = p.times();
    let mut total = 0.0;
    for j in 0..p.nodes() - 1 {
        let u = schedule.value_at(t[j]);
        total += 0.5 * (t[j + 1] - t[j]) * (costs.running(p.state(j), u) + costs.running(p.state(j + 1), u));
    }
    total + costs.terminal(p.final_state())
}

/// Mean and standard error of replication means (of particle means when
/// there is a single replication).
fn summarize(per_path: &[f64], particles: usize) -> (f64, f64, Vec<f64>) {
    let reps: Vec<f64> = per_path.chunks(particles).map(mean).collect();
    let se = if reps.len() > 1 { stderr(&reps) } else { stderr(per_path) };
    (mean(&reps), se, reps)
}

/// `J = E[∫ b(x, u) dt + α(x(T))]` with trapezoidal quadrature.
pub fn cost(ensemble: &Ensemble, schedule: &ControlSchedule, costs: &CostField) -> (f64, f64) {
    let per_path: Vec<f64> = ensemble.paths().map(|p| path_cost(p, schedule, costs)).collect();
    let (est, se, _) = summarize(&per_path, ensemble.particles().max(1));
    (est, se)
}

/// Per-particle running cost to the end of `grid`, optionally with the
/// terminal cost, and the final states; simulated without storing paths.
struct Rollout {
    running: Vec<f64>,
    finals: Vec<f64>,
}

fn rollout(
    prob: &ControlProblem,
    scheme: Scheme,
    grid: &TimeGrid,
    particles: usize,
    noise: &NoiseSource,
    replication: usize,
    schedule: &ControlSchedule,
) -> Result<Rollout, ControlError> {
    let sys = &prob.system;
    let m = sys.dim();
    let mut stepper = Stepper::new(sys, scheme, *grid, particles, replication, Some(schedule))?;
    let mut pn = ParticleNoise::new(noise, replication, particles, sys.noise_dim(), grid)?;
    let mut running = vec![0.0; particles];
    let mut prev = stepper.states().to_vec();
    let mut t_prev = grid.start;
    run_lockstep(std::slice::from_mut(&mut stepper), &mut pn, |s| {
        let s = &s[0];
        let t = s.time();
        let u = schedule.value_at(t_prev);
        for (i, acc) in running.iter_mut().enumerate() {
            let (a, b) = (&prev[i * m..(i + 1) * m], s.state(i));
            *acc += 0.5 * (t - t_prev) * (prob.costs.running(a, u) + prob.costs.running(b, u));
        }
        prev.copy_from_slice(s.states());
        t_prev = t;
        Ok(())
    })?;
    Ok(Rollout { running, finals: prev })
}

/// Cost of one control, per replication, with common random numbers.
fn control_cost(
    prob: &ControlProblem,
    scheme: Scheme,
    grid: &TimeGrid,
    cfg: &SimConfig,
    noise: &NoiseSource,
    schedule: &ControlSchedule,
) -> Result<(f64, f64, Vec<f64>), ControlError> {
    let m = prob.system.dim();
    let per_rep = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let out = rollout(prob, scheme, grid, cfg.particles, noise, r, schedule)?;
            Ok(out
                .running
                .iter()
                .enumerate()
                .map(|(i, run)| run + prob.costs.terminal(&out.finals[i * m..(i + 1) * m]))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>, ControlError>>()?;
    let flat: Vec<f64> = per_rep.concat();
    Ok(summarize(&flat, cfg.particles))
}

/// All piecewise-constant controls with `switches` equally spaced interior
/// switch times, first segment most significant.
pub fn control_family(controls: &[Vec<f64>], horizon: (f64, f64), switches: usize) -> Result<Vec<ControlSchedule>, ControlError> {
    let segments = switches + 1;
    let size = (controls.len() as u128).checked_pow(segments as u32).unwrap_or(u128::MAX);
    if size > MAX_CONTROL_FAMILY {
        return Err(ControlError::Config(format!(
            "control family has {}^{segments} members, more than {MAX_CONTROL_FAMILY}",
            controls.len()
        )));
    }
    let (s, t) = horizon;
    let times: Vec<f64> = (1..segments).map(|j| s + (t - s) * j as f64 / segments as f64).collect();
    let n = controls.len();
    (0..size as usize)
        .map(|mut idx| {
            let mut values = vec![Vec::new(); segments];
            for v in values.iter_mut().rev() {
                *v = controls[idx % n].clone();
                idx /= n;
            }
            Ok(ControlSchedule::new(times.clone(), values)?)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub mc_stderr: f64,
    pub replications: usize,
    pub control: ControlSchedule,
    /// Estimated cost of every enumerated control, in family order.
    pub family_costs: Vec<f64>,
    /// Replication means of the minimizing control's cost.
    #[serde(skip)]
    pub replication_costs: Vec<f64>,
}

fn value_with(
    prob: &ControlProblem,
    scheme: Scheme,
    grid: &TimeGrid,
    cfg: &SimConfig,
    noise: &NoiseSource,
    family: &[ControlSchedule],
) -> Result<ValueEstimate, ControlError> {
    cfg.check()?;
    let results = family
        .par_iter()
        .map(|sched| control_cost(prob, scheme, grid, cfg, noise, sched))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 < results[best].0 {
            best = i;
        }
    }
    let (value, se, reps) = results[best].clone();
    Ok(ValueEstimate {
        value,
        mc_stderr: se,
        replications: cfg.replications,
        control: family[best].clone(),
        family_costs: results.iter().map(|r| r.0).collect(),
        replication_costs: reps,
    })
}

/// `V(s, x₀)`: minimum estimated cost over the control family.
pub fn value(prob: &ControlProblem, scheme: Scheme, cfg: &SimConfig) -> Result<ValueEstimate, ControlError> {
    let family = control_family(&prob.controls, prob.horizon, cfg.switches)?;
    let grid = cfg.grid(prob.horizon)?;
    value_with(prob, scheme, &grid, cfg, &NoiseSource::new(cfg.seed), &family)
}

/// Deterministic Lloyd iterations seeded at order-statistic quantiles.
/// Returns the distinct centers and each point's nearest center.
pub fn kmeans(points: &[f64], dim: usize, k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = points.len() / dim;
    let pt = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pt(a).iter().zip(pt(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.cmp(&b)));
    let k = k.max(1).min(n);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let c = pt(order[((2 * j + 1) * n) / (2 * k)]).to_vec();
        if !centers.contains(&c) {
            centers.push(c);
        }
    }
    let mut assign = vec![0; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let mut best = 0;
            for c in 1..centers.len() {
                if dist_sq(pt(i), &centers[c]) < dist_sq(pt(i), &centers[best]) {
                    best = c;
                }
            }
            changed |= *a != best;
            *a = best;
        }
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(pt(i)) {
                *s += v;
            }
        }
        for (c, (s, &cnt)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if cnt > 0 {
                *c = s.iter().map(|v| v / cnt as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    (centers, assign)
}

#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    pub tau: f64,
    /// `V(s, x₀)` over controls switching at `τ`.
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// `min_u E[∫_s^τ b dt + V(τ, x(τ))]` with nested estimates of `V(τ, ·)`.
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub residual: f64,
    pub stderr: f64,
    pub h: f64,
    /// Cluster centers of `x(τ)` for the minimizing first-segment control.
    pub centers: Vec<Vec<f64>>,
}

impl DppReport {
    /// `residual ≤ max(3·stderr, 5h)`.
    pub fn passed(&self) -> bool {
        self.residual <= (3.0 * self.stderr).max(5.0 * self.h)
    }
}

/// Residual of the dynamic programming identity at a deterministic `τ`.
pub fn dpp_residual(prob: &ControlProblem, tau: f64, scheme: Scheme, cfg: &SimConfig) -> Result<DppReport, ControlError> {
    cfg.check()?;
    let (s, t) = prob.horizon;
    if !(tau >= s && tau < t) {
        return Err(ControlError::Config(format!("τ = {tau} must lie in [{s}, {t})")));
    }
    let grid = cfg.grid(prob.horizon)?;
    let noise = NoiseSource::new(cfg.seed);
    if tau == s {
        let v = value(prob, scheme, cfg)?;
        return Ok(DppReport {
            tau,
            lhs: v.value,
            lhs_stderr: v.mc_stderr,
            rhs: v.value,
            rhs_stderr: v.mc_stderr,
            residual: 0.0,
            stderr: 0.0,
            h: grid.h(),
            centers: vec![prob.system.initial.clone()],
        });
    }
    let first = control_family(&prob.controls, (s, tau), cfg.switches)?;
    let second = control_family(&prob.controls, (tau, t), cfg.switches)?;
    let outer_grid = cfg.grid((s, tau))?;
    let inner_grid = cfg.grid((tau, t))?;
    let inner_cost = (cfg.particles * cfg.replications * inner_grid.steps) as u128;
    let required = first.len() as u128 * cfg.clusters.max(1) as u128 * second.len() as u128 * inner_cost;
    if required > cfg.nested_budget {
        return Err(ControlError::Budget { required, limit: cfg.nested_budget });
    }

    let mut joined = Vec::with_capacity(first.len() * second.len());
    for a in &first {
        for b in &second {
            let mut times = a.switch_times().to_vec();
            times.push(tau);
            times.extend_from_slice(b.switch_times());
            let values = a.values().iter().chain(b.values()).cloned().collect();
            joined.push(ControlSchedule::new(times, values)?);
        }
    }
    let lhs = value_with(prob, scheme, &grid, cfg, &noise, &joined)?;

    let m = prob.system.dim();
    let mut best: Option<(f64, f64, Vec<Vec<f64>>)> = None;
    for (ui, sched) in first.iter().enumerate() {
        let outs = (0..cfg.replications)
            .into_par_iter()
            .map(|r| rollout(prob, scheme, &outer_grid, cfg.particles, &noise, r, sched))
            .collect::<Result<Vec<_>, _>>()?;
        let states: Vec<f64> = outs.iter().flat_map(|o| o.finals.iter().copied()).collect();
        let (centers, assign) = kmeans(&states, m, cfg.clusters);
        let inner: Vec<ValueEstimate> = centers
            .par_iter()
            .enumerate()
            .map(|(ci, c)| {
                let sub = prob.restarted(tau, c.clone())?;
                let seed = noise.derive(((ui as u64) << 16) | ci as u64 | (1 << 40)).seed;
                let sub_cfg = SimConfig { seed, ..cfg.clone() };
                value_with(&sub, scheme, &inner_grid, &sub_cfg, &NoiseSource::new(seed), &second)
            })
            .collect::<Result<_, _>>()?;
        let per_rep: Vec<f64> = outs
            .iter()
            .enumerate()
            .map(|(r, o)| {
                let base = r * cfg.particles;
                let total: f64 = (0..cfg.particles).map(|i| o.running[i] + inner[assign[base + i]].value).sum();
                total / cfg.particles as f64
            })
            .collect();
        let n_total = assign.len() as f64;
        let mut inner_var = 0.0;
        for (ci, v) in inner.iter().enumerate() {
            let w = assign.iter().filter(|&&a| a == ci).count() as f64 / n_total;
            inner_var += (w * v.mc_stderr).powi(2);
        }
        let outer_se = if per_rep.len() > 1 {
            stderr(&per_rep)
        } else {
            let flat: Vec<f64> = (0..cfg.particles).map(|i| outs[0].running[i] + inner[assign[i]].value).collect();
            stderr(&flat)
        };
        let est = mean(&per_rep);
        let se = (outer_se * outer_se + inner_var).sqrt();
        if best.as_ref().is_none_or(|b| est < b.0) {
            best = Some((est, se, centers));
        }
    }
    let (rhs, rhs_se, centers) = best.expect("non-empty control family");
    let se = (lhs.mc_stderr.powi(2) + rhs_se.powi(2)).sqrt();
    Ok(DppReport {
        tau,
        lhs: lhs.value,
        lhs_stderr: lhs.mc_stderr,
        rhs,
        rhs_stderr: rhs_se,
        residual: (lhs.value - rhs).abs(),
        stderr: se,
        h: grid.h(),
        centers,
    })
}

/// Log-log rate fit.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    /// Abscissa of each point before taking logarithms.
    pub abscissa: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fit: Option<LinearFit>,
    /// All values at the noise floor; no meaningful slope.
    pub degenerate: bool,
    /// Discretization floor, when measured.
    pub floor: Option<f64>,
    /// Points at or below twice the floor (excluded from the fit when at
    /// least three others remain).
    pub floored: Vec<bool>,
}

impl RateReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    pub fn r_squared(&self) -> Option<f64> {
        self.fit.map(|f| f.r_squared)
    }

    fn build(abscissa: Vec<f64>, values: Vec<f64>, stderr: Vec<f64>, floor: Option<f64>) -> Self {
        const NOISE_FLOOR: f64 = 1e-24;
        let degenerate = values.iter().all(|v| *v <= NOISE_FLOOR);
        let floored: Vec<bool> = values.iter().map(|v| floor.is_some_and(|f| *v <= 2.0 * f)).collect();
        let use_all = floored.iter().filter(|f| !**f).count() < 3;
        let (xs, ys): (Vec<f64>, Vec<f64>) = abscissa
            .iter()
            .zip(&values)
            .zip(&floored)
            .filter(|((_, v), fl)| **v > NOISE_FLOOR && (use_all || !**fl))
            .map(|((a, v), _)| (a.ln(), v.ln()))
            .unzip();
        let fit = if degenerate || xs.len() < 2 { None } else { linear_fit(&xs, &ys) };
        Self { abscissa, values, stderr, fit, degenerate, floor, floored }
    }
}

fn check_ladder(ladder: &[f64]) -> Result<(), ControlError> {
    if ladder.len() < 3 {
        return Err(ControlError::Config(format!("an ε ladder needs at least 3 points, got {}", ladder.len())));
    }
    if ladder.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(ControlError::Config("ε values must be positive".into()));
    }
    Ok(())
}

/// Per-ε statistics of penalized runs sharing one Brownian path.
#[derive(Debug, Clone, Serialize)]
pub struct LadderStatistics {
    pub epsilons: Vec<f64>,
    /// `E sup_t |x^{ε_i} − x^{ε_{i+1}}|²` and its standard error.
    pub pair_distance: Vec<f64>,
    pub pair_stderr: Vec<f64>,
    /// `E sup_t |x^ε|²`.
    pub sup_second_moment: Vec<f64>,
    /// `E ∫ |∇Π_ε(x^ε)|² dt`.
    pub gradient_energy: Vec<f64>,
}

/// Runs the penalized scheme for every ε of `ladder` in lockstep.
pub fn penalized_ladder(
    system: &System,
    control: Option<&ControlSchedule>,
    ladder: &[f64],
    grid: &TimeGrid,
    particles: usize,
    replications: usize,
    noise: &NoiseSource,
) -> Result<LadderStatistics, ControlError> {
    if ladder.is_empty() || particles == 0 || replications == 0 {
        return Err(ControlError::Config("need ε values, particles and replications".into()));
    }
    let m = system.dim();
    let e = ladder.len();
    let h = grid.h();
    let per_rep = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut steppers = ladder
                .iter()
                .map(|&epsilon| Stepper::new(system, Scheme::Penalized { epsilon }, *grid, particles, r, control))
                .collect::<Result<Vec<_>, _>>()?;
            let mut pn = ParticleNoise::new(noise, r, particles, system.noise_dim(), grid)?;
            let mut pair = vec![0.0_f64; (e - 1) * particles];
            let mut sup = vec![system.initial.iter().map(|v| v * v).sum::<f64>(); e * particles];
            let mut energy = vec![0.0_f64; e * particles];
            run_lockstep(&mut steppers, &mut pn, |s| {
                for q in 0..e {
                    let dk = s[q].last_increments();
                    for i in 0..particles {
                        let x = s[q].state(i);
                        let slot = q * particles + i;
                        sup[slot] = sup[slot].max(x.iter().map(|v| v * v).sum());
                        energy[slot] += norm(&dk[i * m..(i + 1) * m]).powi(2) / h;
                        if q + 1 < e {
                            let d = dist_sq(x, s[q + 1].state(i));
                            pair[slot] = pair[slot].max(d);
                        }
                    }
                }
                Ok(())
            })?;
            let avg = |v: &[f64], q: usize| mean(&v[q * particles..(q + 1) * particles]);
            Ok((
                (0..e - 1).map(|q| avg(&pair, q)).collect::<Vec<_>>(),
                (0..e).map(|q| avg(&sup, q)).collect::<Vec<_>>(),
                (0..e).map(|q| avg(&energy, q)).collect::<Vec<_>>(),
            ))
        })
        .collect::<Result<Vec<_>, ControlError>>()?;
    let column = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>, q: usize| -> Vec<f64> {
        per_rep.iter().map(|row| pick(row)[q]).collect()
    };
    let pair_cols: Vec<Vec<f64>> = (0..e - 1).map(|q| column(&|r| &r.0, q)).collect();
    Ok(LadderStatistics {
        epsilons: ladder.to_vec(),
        pair_distance: pair_cols.iter().map(|c| mean(c)).collect(),
        pair_stderr: pair_cols.iter().map(|c| stderr(c)).collect(),
        sup_second_moment: (0..e).map(|q| mean(&column(&|r| &r.1, q))).collect(),
        gradient_energy: (0..e).map(|q| mean(&column(&|r| &r.2, q))).collect(),
    })
}

/// Fits `log E sup|x^ε − x^{ε′}|²` against `log(ε + ε′)` over consecutive
/// ladder pairs.
pub fn penalization_rate_probe(
    system: &System,
    control: Option<&ControlSchedule>,
    ladder: &[f64],
    grid: &TimeGrid,
    particles: usize,
    replications: usize,
    noise: &NoiseSource,
) -> Result<RateReport, ControlError> {
    check_ladder(ladder)?;
    let stats = penalized_ladder(system, control, ladder, grid, particles, replications, noise)?;
    let abscissa = ladder.windows(2).map(|w| w[0] + w[1]).collect();
    Ok(RateReport::build(abscissa, stats.pair_distance, stats.pair_stderr, None))
}

/// Fits `log|V_ε − V|` against `log ε`, with `V` from the projected
/// scheme. The floor is `|V_h − V_{h/2}|` for the projected scheme.
pub fn value_rate_probe(prob: &ControlProblem, ladder: &[f64], cfg: &SimConfig) -> Result<RateReport, ControlError> {
    check_ladder(ladder)?;
    let family = control_family(&prob.controls, prob.horizon, cfg.switches)?;
    let grid = cfg.grid(prob.horizon)?;
    let fine = TimeGrid::new(grid.start, grid.end, 2 * grid.steps)?;
    let noise = NoiseSource::new(cfg.seed).with_resolution(fine.steps);
    let reference = value_with(prob, Scheme::Projected, &grid, cfg, &noise, &family)?;
    let halved = value_with(prob, Scheme::Projected, &fine, cfg, &noise, &family)?;
    let floor = (reference.value - halved.value).abs();
    let mut values = Vec::with_capacity(ladder.len());
    let mut errs = Vec::with_capacity(ladder.len());
    for &epsilon in ladder {
        let v = value_with(prob, Scheme::Penalized { epsilon }, &grid, cfg, &noise, &family)?;
        values.push((v.value - reference.value).abs());
        let diffs: Vec<f64> = v.replication_costs.iter().zip(&reference.replication_costs).map(|(a, b)| a - b).collect();
        errs.push(stderr(&diffs));
    }
    Ok(RateReport::build(ladder.to_vec(), values, errs, Some(floor)))
}

#[derive(Debug, Clone, Serialize)]
pub struct Perturbation {
    pub scale: f64,
    pub dx: Vec<f64>,
    pub ds: f64,
}

/// `±δ e_i`, `Δs = δ²`, and the combined `(δ e₁, δ²)` for each scale.
pub fn standard_perturbations(dim: usize, scales: &[f64]) -> Vec<Perturbation> {
    let mut out = Vec::new();
    for &scale in scales {
        for i in 0..dim {
            for sign in [-1.0, 1.0] {
                let mut dx = vec![0.0; dim];
                dx[i] = sign * scale;
                out.push(Perturbation { scale, dx, ds: 0.0 });
            }
        }
        out.push(Perturbation { scale, dx: vec![0.0; dim], ds: scale * scale });
        let mut dx = vec![0.0; dim];
        dx[0] = scale;
        out.push(Perturbation { scale, dx, ds: scale * scale });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityProbe {
    pub perturbation: Perturbation,
    pub value: f64,
    pub delta_v: f64,
    pub delta_stderr: f64,
    /// `|ΔV| / (|Δx| + |Δs|^{1/2})`; 0 for the null perturbation.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSummary {
    pub scale: f64,
    pub max_ratio: f64,
    /// Standard error of the maximizing probe's ratio.
    pub ratio_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub base: f64,
    pub base_stderr: f64,
    pub probes: Vec<RegularityProbe>,
    pub scales: Vec<ScaleSummary>,
    /// Largest ratio of per-scale maxima, widened by 3 standard errors.
    pub spread: f64,
}

impl RegularityReport {
    pub fn passed(&self, factor: f64) -> bool {
        self.spread < factor
    }
}

/// Value differences under common random numbers for shifted `(s, x₀)`.
pub fn value_regularity_probe(
    prob: &ControlProblem,
    perturbations: &[Perturbation],
    cfg: &SimConfig,
) -> Result<RegularityReport, ControlError> {
    let family = control_family(&prob.controls, prob.horizon, cfg.switches)?;
    let noise = NoiseSource::new(cfg.seed);
    let base = value_with(prob, Scheme::Projected, &cfg.grid(prob.horizon)?, cfg, &noise, &family)?;
    let mut probes = Vec::with_capacity(perturbations.len());
    for p in perturbations {
        let denom = norm(&p.dx) + p.ds.abs().sqrt();
        if denom == 0.0 {
            probes.push(RegularityProbe { perturbation: p.clone(), value: base.value, delta_v: 0.0, delta_stderr: 0.0, ratio: 0.0 });
            continue;
        }
        let s = prob.horizon.0 + p.ds;
        let x: Vec<f64> = prob.system.initial.iter().zip(&p.dx).map(|(a, b)| a + b).collect();
        let shifted = prob.restarted(s, x)?;
        let fam = control_family(&shifted.controls, shifted.horizon, cfg.switches)?;
        let v = value_with(&shifted, Scheme::Projected, &cfg.grid(shifted.horizon)?, cfg, &noise, &fam)?;
        let diffs: Vec<f64> = v.replication_costs.iter().zip(&base.replication_costs).map(|(a, b)| a - b).collect();
        let delta_v = v.value - base.value;
        probes.push(RegularityProbe {
            perturbation: p.clone(),
            value: v.value,
            delta_v,
            delta_stderr: stderr(&diffs),
            ratio: delta_v.abs() / denom,
        });
    }
    let mut scales: Vec<ScaleSummary> = Vec::new();
    for p in &probes {
        let sc = p.perturbation.scale;
        let denom = norm(&p.perturbation.dx) + p.perturbation.ds.abs().sqrt();
        let se = if denom > 0.0 { p.delta_stderr / denom } else { 0.0 };
        match scales.iter_mut().find(|s| s.scale == sc) {
            Some(s) if p.ratio > s.max_ratio => {
                s.max_ratio = p.ratio;
                s.ratio_stderr = se;
            }
            Some(_) => {}
            None => scales.push(ScaleSummary { scale: sc, max_ratio: p.ratio, ratio_stderr: se }),
        }
    }
    let hi = scales.iter().map(|s| s.max_ratio - 3.0 * s.ratio_stderr).fold(f64::NEG_INFINITY, f64::max);
    let lo = scales.iter().map(|s| s.max_ratio + 3.0 * s.ratio_stderr).fold(f64::INFINITY, f64::min);
    let spread = if scales.len() < 2 || hi <= 0.0 { 1.0 } else { (hi / lo).max(1.0) };
    Ok(RegularityReport { base: base.value, base_stderr: base.mc_stderr, probes, scales, spread })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_enumeration_order_and_guard() {
        let u = vec![vec![-1.0], vec![1.0]];
        let fam = control_family(&u, (0.0, 1.0), 1).unwrap();
        assert_eq!(fam.len(), 4);
        assert_eq!(fam[1].values(), &[vec![-1.0], vec![1.0]]);
        assert_eq!(fam[1].switch_times(), &[0.5]);
        let many: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        assert!(matches!(control_family(&many, (0.0, 1.0), 5), Err(ControlError::Config(_))));
        assert_eq!(control_family(&many, (0.0, 1.0), 4).unwrap().len(), 100_000);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let pts = [0.0, 0.1, 0.05, 5.0, 5.2, 5.1];
        let (c, a) = kmeans(&pts, 1, 2);
        assert_eq!(c.len(), 2);
        assert_eq!(a[0], a[1]);
        assert_ne!(a[0], a[3]);
        assert!((c[a[3]][0] - 5.1).abs() < 1e-12);
        let (c, _) = kmeans(&[1.0, 1.0, 1.0], 1, 8);
        assert_eq!(c, vec![vec![1.0]]);
    }

    #[test]
    fn rate_report_flags_degenerate() {
        let r = RateReport::build(vec![1.0, 0.5, 0.25], vec![0.0, 0.0, 0.0], vec![0.0; 3], None);
        assert!(r.degenerate && r.fit.is_none());
        let r = RateReport::build(vec![1.0, 0.5, 0.25], vec![1.0, 0.5, 0.25], vec![0.0; 3], None);
        assert!((r.slope().unwrap() - 1.0).abs() < 1e-12);
    }
}

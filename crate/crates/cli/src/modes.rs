//! One runner per configuration mode. Each runner computes everything in
//! memory; nothing is written until the whole run has succeeded.

use std::io::Write;

use oblique_mv::control::{
    dpp_residual, penalization_rate_probe, standard_perturbations, value, value_rate_probe, value_regularity_probe, ControlError,
    RateReport, SimConfig,
};
use oblique_mv::convex::check_yosida_properties;
use oblique_mv::dynamics::{validate_lipschitz, validate_oblique, StateSampler};
use oblique_mv::io::{fmt_f64, write_record};
use oblique_mv::library::{self, Bundled, LibraryError};
use oblique_mv::measures::second_moment_sup;
use oblique_mv::solver::{residual_report, simulate, ControlSchedule, NoiseSource, ProbeFamily, SolverError, TimeGrid};
use oblique_mv::timedep::{equivalence_check, TimeDepError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, GridSpec, SystemRef};
use crate::CliError;

/// Outcome of a probe that has a pass/fail reading.
#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
    pub check: Option<Check>,
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Config(_) | SolverError::Unstable { .. } => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ControlError> for CliError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Solver(s) => s.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<TimeDepError> for CliError {
    fn from(e: TimeDepError) -> Self {
        match e {
            TimeDepError::Solver(s) => s.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<LibraryError> for CliError {
    fn from(e: LibraryError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn grid_of(g: &GridSpec) -> Result<TimeGrid, CliError> {
    TimeGrid::new(g.horizon.0, g.horizon.1, g.steps).map_err(|e| CliError::Config(format!("grid: {e}")))
}

fn build(r: &SystemRef) -> Result<Bundled, CliError> {
    library::build(&r.name, &r.params).map_err(|e| CliError::Config(format!("system: {e}")))
}

fn to_json(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn rate_csv(rep: &RateReport, abscissa: &str) -> Vec<u8> {
    let mut out = Vec::new();
    write_record(&mut out, [abscissa, "value", "stderr", "floored"]).unwrap();
    for i in 0..rep.values.len() {
        let floored = rep.floored.get(i).copied().unwrap_or(false);
        write_record(&mut out, [fmt_f64(rep.abscissa[i]), fmt_f64(rep.values[i]), fmt_f64(rep.stderr[i]), floored.to_string()]).unwrap();
    }
    out
}

fn rate_check(rep: &RateReport, slope_ok: impl Fn(f64) -> bool, min_r2: f64, want: &str) -> Check {
    let (slope, r2) = (rep.slope().unwrap_or(f64::NAN), rep.r_squared().unwrap_or(f64::NAN));
    Check { passed: slope_ok(slope) && r2 >= min_r2, detail: format!("slope {slope:.3} ({want}), R² {r2:.3} (want ≥ {min_r2})") }
}

fn combine(checks: Vec<Check>) -> Option<Check> {
    if checks.is_empty() {
        return None;
    }
    Some(Check {
        passed: checks.iter().all(|c| c.passed),
        detail: checks.iter().map(|c| c.detail.as_str()).collect::<Vec<_>>().join("; "),
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    match cfg {
        ExperimentConfig::Simulate { system, grid, particles, replications, scheme, control, diagnostics, seed, .. } => {
            let grid = grid_of(grid)?;
            let sys = match build(system)? {
                Bundled::System(s) => s,
                Bundled::Control(p) => {
                    if control.is_none() {
                        return Err(CliError::Config(format!("control: {:?} is a control problem and needs a control value", system.name)));
                    }
                    p.system
                }
                Bundled::Moving(_) => {
                    return Err(CliError::Config(format!("system: {:?} is a moving-constraint problem; use transform-demo", system.name)))
                }
            };
            let schedule = control.clone().map(ControlSchedule::constant);
            if let Some(u) = control {
                if u.len() != sys.coefficients.control_dim() {
                    return Err(CliError::Config(format!("control: expected {} values", sys.coefficients.control_dim())));
                }
            }
            let noise = NoiseSource::new(*seed);
            let ens = simulate(&sys, *scheme, &grid, *particles, *replications, &noise, schedule.as_ref())?;
            let mut csv = Vec::new();
            ens.write_csv(&mut csv).expect("in-memory write");
            let m = sys.dim();
            let mut mean_final = vec![0.0; m];
            let mut feasibility = 0.0_f64;
            for p in ens.paths() {
                for (a, b) in mean_final.iter_mut().zip(p.final_state()) {
                    *a += b / ens.len() as f64;
                }
                for x in p.states() {
                    feasibility = feasibility.max(sys.constraint.domain_distance(x));
                }
            }
            let mut summary = json!({
                "system": system.name,
                "scheme": to_json(scheme),
                "steps": grid.steps,
                "h": grid.h(),
                "particles": particles,
                "replications": replications,
                "sup_second_moment": second_moment_sup(&ens).map_err(|e| CliError::Numerical(e.to_string()))?,
                "mean_final_state": mean_final,
                "max_domain_distance": feasibility,
            });
            if *diagnostics {
                let d = residual_report(&ens, &sys, *scheme, &grid, &noise, schedule.as_ref(), &ProbeFamily::standard(&sys, 0.1))?;
                summary["diagnostics"] = to_json(&d);
            }
            Ok(RunOutput { files: vec![("paths.csv".into(), csv)], summary, check: None })
        }
        ExperimentConfig::Converge { system, grid, epsilons, particles, replications, seed, .. } => {
            let grid = grid_of(grid)?;
            let sys = match build(system)? {
                Bundled::System(s) => s,
                _ => return Err(CliError::Config(format!("system: {:?} is not an uncontrolled system", system.name))),
            };
            let rep = penalization_rate_probe(&sys, None, epsilons, &grid, *particles, *replications, &NoiseSource::new(*seed))?;
            let check = rate_check(&rep, |s| (0.7..=1.3).contains(&s), 0.9, "want [0.7, 1.3]");
            let summary = json!({ "system": system.name, "steps": grid.steps, "epsilons": epsilons, "rate": to_json(&rep) });
            Ok(RunOutput { files: vec![("rate.csv".into(), rate_csv(&rep, "epsilon_sum"))], summary, check: Some(check) })
        }
        ExperimentConfig::Control {
            problem,
            dt,
            particles,
            replications,
            switches,
            clusters,
            scheme,
            dpp_tau,
            regularity_scales,
            epsilons,
            seed,
            ..
        } => {
            let prob = match build(problem)? {
                Bundled::Control(p) => p,
                _ => return Err(CliError::Config(format!("problem: {:?} is not a control problem", problem.name))),
            };
            let mut sim = SimConfig::new(*dt, *particles, *replications, *seed);
            sim.switches = *switches;
            sim.clusters = *clusters;
            let v = value(&prob, *scheme, &sim)?;
            let mut files = Vec::new();
            let mut family = Vec::new();
            write_record(&mut family, ["index", "cost"]).unwrap();
            for (i, c) in v.family_costs.iter().enumerate() {
                write_record(&mut family, [i.to_string(), fmt_f64(*c)]).unwrap();
            }
            files.push(("family.csv".into(), family));
            let mut summary = json!({ "problem": problem.name, "config": to_json(&sim), "value": to_json(&v) });
            let mut checks = Vec::new();
            if let Some(tau) = dpp_tau {
                let (s, t) = prob.horizon;
                if !(*tau > s && *tau < t) {
                    return Err(CliError::Config(format!("dpp_tau: must lie strictly inside ({s}, {t})")));
                }
                let d = dpp_residual(&prob, *tau, *scheme, &sim)?;
                checks.push(Check {
                    passed: d.passed(),
                    detail: format!("DPP residual {:.3e} (allowance {:.3e})", d.residual, (3.0 * d.stderr).max(5.0 * d.h)),
                });
                summary["dpp"] = to_json(&d);
            }
            if let Some(scales) = regularity_scales {
                let r = value_regularity_probe(&prob, &standard_perturbations(prob.system.dim(), scales), &sim)?;
                checks.push(Check { passed: r.passed(3.0), detail: format!("regularity spread {:.2} (want < 3)", r.spread) });
                summary["regularity"] = to_json(&r);
            }
            if let Some(eps) = epsilons {
                let r = value_rate_probe(&prob, eps, &sim)?;
                checks.push(rate_check(&r, |s| s >= 0.35, 0.8, "want ≥ 0.35"));
                files.push(("value_rate.csv".into(), rate_csv(&r, "epsilon")));
                summary["value_rate"] = to_json(&r);
            }
            Ok(RunOutput { files, summary, check: combine(checks) })
        }
        ExperimentConfig::Validate { system, samples, radius, atoms, horizon, seed, .. } => {
            let bundled = build(system)?;
            let (coefficients, oblique, controls, dim) = match &bundled {
                Bundled::System(s) => (&s.coefficients, &s.oblique, vec![], s.dim()),
                Bundled::Control(p) => (&p.system.coefficients, &p.system.oblique, p.controls.clone(), p.system.dim()),
                Bundled::Moving(p) => (&p.coefficients, &p.path, vec![], p.dim()),
            };
            let sampler = StateSampler { dim, radius: *radius, atoms: *atoms, seed: *seed };
            let lip = validate_lipschitz(coefficients, &sampler, *samples, &controls, horizon.0);
            let obl = validate_oblique(oblique, &sampler, *samples, *horizon);
            let check = Check {
                passed: lip.passed && obl.passed(),
                detail: format!(
                    "Lipschitz estimate {:.4} vs declared {:.4}; H eigenvalues [{:.4}, {:.4}] vs declared [{:.4}, {:.4}]",
                    lip.estimate, lip.declared, obl.min_eigenvalue, obl.max_eigenvalue, obl.declared.0, obl.declared.1
                ),
            };
            let summary = json!({ "system": system.name, "lipschitz": to_json(&lip), "oblique": to_json(&obl) });
            Ok(RunOutput { files: vec![], summary, check: Some(check) })
        }
        ExperimentConfig::TransformDemo { problem, form, ladder, particles, replications, seed, .. } => {
            let prob = match build(problem)? {
                Bundled::Moving(p) => p,
                _ => return Err(CliError::Config(format!("problem: {:?} is not a moving-constraint problem", problem.name))),
            };
            let rep = equivalence_check(&prob, *form, ladder, *particles, *replications, &NoiseSource::new(*seed))?;
            let mut csv = Vec::new();
            write_record(&mut csv, ["steps", "h", "feasibility", "sup_distance"]).unwrap();
            for l in &rep.levels {
                let d = l.sup_distance.map_or_else(|| "nan".to_string(), fmt_f64);
                write_record(&mut csv, [l.steps.to_string(), fmt_f64(l.h), fmt_f64(l.feasibility), d]).unwrap();
            }
            let finest = rep.levels.last().expect("non-empty ladder");
            let bound = 10.0 * finest.h.sqrt();
            let within = finest.sup_distance.is_some_and(|d| d <= bound);
            let check = Check {
                passed: rep.monotone == Some(true) && within && rep.max_feasibility() <= 1e-8,
                detail: format!(
                    "monotone {:?}, finest sup-distance {:?} (bound {bound:.3e}), feasibility {:.2e}",
                    rep.monotone,
                    finest.sup_distance,
                    rep.max_feasibility()
                ),
            };
            let summary = json!({ "problem": problem.name, "report": to_json(&rep) });
            Ok(RunOutput { files: vec![("equivalence.csv".into(), csv)], summary, check: Some(check) })
        }
        ExperimentConfig::Properties { constraint, epsilons, samples, radius, seed, .. } => {
            let c = constraint.build()?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let points: Vec<Vec<f64>> =
                (0..*samples).map(|_| (0..c.dim()).map(|_| rng.random_range(-*radius..=*radius)).collect()).collect();
            let rep = check_yosida_properties(&c, epsilons, &points).map_err(|e| CliError::Numerical(e.to_string()))?;
            let check = Check {
                passed: rep.passed(),
                detail: format!("max violation {:.3e} (tolerance {:.1e}), failing {:?}", rep.max_violation(), rep.tolerance, rep.failures()),
            };
            let mut csv = Vec::new();
            write_record(&mut csv, ["property", "violation"]).unwrap();
            for (name, v) in oblique_mv::convex::PROPERTY_NAMES.iter().zip(&rep.violations) {
                write_record(&mut csv, [name.to_string(), fmt_f64(*v)]).unwrap();
            }
            let summary = json!({ "report": to_json(&rep) });
            Ok(RunOutput { files: vec![("properties.csv".into(), csv)], summary, check: Some(check) })
        }
    }
}

/// Human-readable summary printed after a run.
pub fn render(mode: &str, out: &RunOutput, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "mode: {mode}")?;
    for (name, bytes) in &out.files {
        writeln!(w, "  {name}: {} bytes", bytes.len())?;
    }
    if let Some(c) = &out.check {
        writeln!(w, "check: {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.detail)?;
    }
    Ok(())
}

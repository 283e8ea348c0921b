//! Bundled test systems, selectable by name with optional parameters.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, ControlProblem};
use crate::convex::{ConvexConstraint, ConvexError, Geometry};
use crate::dynamics::{CoefficientField, CostField, DynamicsError, ObliqueField, System};
use crate::linalg::{norm, Matrix};
use crate::measures::EmpiricalMeasure;
use crate::timedep::{MatrixFamily, MovingConstraintProblem, TimeDepError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LibraryError {
    #[error("unknown system {name:?}; available: {}", NAMES.join(", "))]
    Unknown { name: String },
    #[error("system {system:?} has no parameter {key:?}; accepted: {accepted}")]
    UnknownParam { system: String, key: String, accepted: String },
    #[error("parameter {key:?}: {msg}")]
    BadParam { key: String, msg: String },
    #[error("system {name:?} is not a {kind}")]
    WrongKind { name: String, kind: &'static str },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    TimeDep(#[from] TimeDepError),
}

pub const NAMES: &[&str] =
    &["oblique-ball", "oblique-ball-strong", "ou", "reflected-bm", "ball-bm", "linear", "two-control", "moving-interval"];

/// What a name resolves to.
#[derive(Debug, Clone)]
pub enum Bundled {
    System(System),
    Control(ControlProblem),
    Moving(MovingConstraintProblem),
}

impl Bundled {
    /// The simulated system (the reduced one is not built here).
    pub fn system(&self) -> Option<&System> {
        match self {
            Bundled::System(s) => Some(s),
            Bundled::Control(p) => Some(&p.system),
            Bundled::Moving(_) => None,
        }
    }
}

struct Reader<'a> {
    system: &'a str,
    params: &'a Params,
    accepted: &'static [&'static str],
}

impl Reader<'_> {
    fn new<'a>(system: &'a str, params: &'a Params, accepted: &'static [&'static str]) -> Result<Reader<'a>, LibraryError> {
        if let Some(key) = params.keys().find(|k| !accepted.contains(&k.as_str())) {
            return Err(LibraryError::UnknownParam {
                system: system.into(),
                key: key.clone(),
                accepted: if accepted.is_empty() { "none".into() } else { accepted.join(", ") },
            });
        }
        Ok(Reader { system, params, accepted })
    }

    fn scalar(&self, key: &str, default: f64) -> Result<f64, LibraryError> {
        debug_assert!(self.accepted.contains(&key), "{key} not declared for {}", self.system);
        match self.params.get(key) {
            None => Ok(default),
            Some(ParamValue::Scalar(v)) if v.is_finite() => Ok(*v),
            Some(_) => Err(LibraryError::BadParam { key: key.into(), msg: "expected a finite number".into() }),
        }
    }

    fn vector(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, LibraryError> {
        match self.params.get(key) {
            None => Ok(default.to_vec()),
            Some(ParamValue::Vector(v)) if v.len() == default.len() && v.iter().all(|x| x.is_finite()) => Ok(v.clone()),
            Some(ParamValue::Scalar(v)) if default.len() == 1 && v.is_finite() => Ok(vec![*v]),
            Some(_) => {
                Err(LibraryError::BadParam { key: key.into(), msg: format!("expected {} finite numbers", default.len()) })
            }
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, LibraryError> {
        let v = self.scalar(key, default)?;
        if v <= 0.0 {
            return Err(LibraryError::BadParam { key: key.into(), msg: "must be positive".into() });
        }
        Ok(v)
    }
}

fn w2_to_origin(mu: &EmpiricalMeasure) -> f64 {
    mu.w2_to_origin()
}

fn oblique_ball_coefficients() -> Result<CoefficientField, DynamicsError> {
    let root5 = 5.0_f64.sqrt();
    let drift = Arc::new(move |_t: f64, x: &[f64], mu: &EmpiricalMeasure, _u: &[f64], out: &mut [f64]| {
        let v = (x[0] * x[0] + x[1] * x[1] + 5.0).sqrt() - root5 + w2_to_origin(mu);
        out.fill(v);
    });
    let diffusion = Arc::new(|_t: f64, x: &[f64], mu: &EmpiricalMeasure, _u: &[f64], out: &mut [f64]| {
        let v = norm(x).min(1.0).exp() - 1.0 + w2_to_origin(mu).sin();
        out.copy_from_slice(&[v, 0.0, 0.0, v]);
    });
    CoefficientField::new(2, 2, 0, drift, diffusion, 2.0_f64.sqrt() * (1.0 + std::f64::consts::E))
}

fn oblique_ball(p: &Params, strong: bool) -> Result<System, LibraryError> {
    let r = Reader::new(if strong { "oblique-ball-strong" } else { "oblique-ball" }, p, &["x0", "radius"])?;
    let x0 = r.vector("x0", &[0.5, 0.5])?;
    let radius = r.positive("radius", 1.0)?;
    let e = std::f64::consts::E;
    let oblique = if strong {
        ObliqueField::state_dependent(
            2,
            Arc::new(|_t, x: &[f64], _mu, out: &mut Matrix| {
                out.copy_from(&Matrix::from_diag(&[x[0].sin() + 5.0, x[1].min(1.0).exp() + 4.0 + x[1].cos()]))
            }),
            3.0,
            5.0 + e,
        )?
    } else {
        ObliqueField::state_dependent(
            2,
            Arc::new(|_t, x: &[f64], mu: &EmpiricalMeasure, out: &mut Matrix| {
                let w = w2_to_origin(mu);
                out.copy_from(&Matrix::from_diag(&[x[0].sin() + 5.0 + w.cos(), x[1].cos().exp() + 4.0 + w.min(1.0)]))
            }),
            3.0,
            5.0 + e,
        )?
    };
    let constraint = ConvexConstraint::indicator(Geometry::ball(vec![0.0, 0.0], radius))?;
    let name = if strong { "oblique-ball-strong" } else { "oblique-ball" };
    Ok(System::new(name, oblique_ball_coefficients()?, oblique, constraint, x0)?)
}

fn scalar_field(drift: impl Fn(f64, &EmpiricalMeasure, &[f64]) -> f64 + Send + Sync + 'static, sigma: f64, controls: usize, lipschitz: f64) -> Result<CoefficientField, DynamicsError> {
    CoefficientField::affine(
        1,
        1,
        controls,
        Arc::new(move |_t, x: &[f64], mu: &EmpiricalMeasure, u: &[f64], out: &mut [f64]| out[0] = drift(x[0], mu, u)),
        Arc::new(move |_t, _x, _mu, _u, out: &mut [f64]| out[0] = sigma),
        lipschitz,
    )
}

fn half_line() -> Result<ConvexConstraint, ConvexError> {
    ConvexConstraint::indicator(Geometry::half_line())
}

fn ou(p: &Params) -> Result<System, LibraryError> {
    let r = Reader::new("ou", p, &["theta", "sigma", "coupling", "x0", "h"])?;
    let theta = r.scalar("theta", 1.0)?;
    let sigma = r.scalar("sigma", 1.0)?;
    let kappa = r.scalar("coupling", 0.0)?;
    let x0 = r.scalar("x0", 0.5)?;
    let h = r.positive("h", 1.0)?;
    let field = scalar_field(move |x, mu, _| -theta * x + kappa * (mu.mean()[0] - x), sigma, 0, theta.abs() + 2.0 * kappa.abs() + 1e-12)?;
    Ok(System::new("ou", field, ObliqueField::constant(Matrix::from_diag(&[h]))?, half_line()?, vec![x0])?)
}

fn reflected_bm(p: &Params) -> Result<System, LibraryError> {
    let r = Reader::new("reflected-bm", p, &["sigma", "x0"])?;
    let sigma = r.scalar("sigma", 1.0)?;
    let x0 = r.scalar("x0", 0.0)?;
    let field = scalar_field(|_, _, _| 0.0, sigma, 0, 1.0)?;
    Ok(System::new("reflected-bm", field, ObliqueField::identity(1), half_line()?, vec![x0])?)
}

fn ball_bm(p: &Params) -> Result<System, LibraryError> {
    let r = Reader::new("ball-bm", p, &["sigma", "x0", "radius"])?;
    let sigma = r.scalar("sigma", 1.0)?;
    let x0 = r.vector("x0", &[0.5, 0.0])?;
    let radius = r.positive("radius", 1.0)?;
    let field = CoefficientField::affine(
        2,
        2,
        0,
        Arc::new(|_t, _x, _mu, _u, out: &mut [f64]| out.fill(0.0)),
        Arc::new(move |_t, _x, _mu, _u, out: &mut [f64]| out.copy_from_slice(&[sigma, 0.0, 0.0, sigma])),
        1.0,
    )?;
    let h = ObliqueField::constant(Matrix::from_rows(&[&[1.5, 0.3], &[0.3, 1.0]]))?;
    let constraint = ConvexConstraint::indicator(Geometry::ball(vec![0.0, 0.0], radius))?;
    Ok(System::new("ball-bm", field, h, constraint, x0)?)
}

fn linear(p: &Params) -> Result<ControlProblem, LibraryError> {
    let r = Reader::new("linear", p, &["a", "sigma", "x0", "horizon"])?;
    let a = r.scalar("a", 0.0)?;
    let sigma = r.scalar("sigma", 0.0)?;
    let x0 = r.scalar("x0", 5.0)?;
    let horizon = r.positive("horizon", 1.0)?;
    let field = scalar_field(move |x, _, u| a * x + u[0], sigma, 1, a.abs() + 1e-12)?;
    let sys = System::new("linear", field, ObliqueField::identity(1), half_line()?, vec![x0])?;
    let costs = CostField::new(Arc::new(|x: &[f64], _u: &[f64]| x[0]), Arc::new(|x: &[f64]| x[0]), 1.0);
    Ok(ControlProblem::new(sys, costs, vec![vec![-1.0], vec![0.0], vec![1.0]], (0.0, horizon))?)
}

fn two_control(p: &Params) -> Result<ControlProblem, LibraryError> {
    let r = Reader::new("two-control", p, &["sigma", "x0", "coupling", "horizon", "h-rate"])?;
    let sigma = r.scalar("sigma", 0.0)?;
    let x0 = r.scalar("x0", 0.5)?;
    let kappa = r.scalar("coupling", 0.0)?;
    let horizon = r.positive("horizon", 1.0)?;
    let rate = r.scalar("h-rate", 0.5)?;
    let field = scalar_field(move |x, mu, u| u[0] + kappa * (mu.mean()[0] - x), sigma, 1, 2.0 * kappa.abs() + 1e-12)?;
    let h = MatrixFamily::Affine { base: vec![vec![1.0]], slope: vec![vec![rate]] }.field((0.0, horizon))?;
    let sys = System::new("two-control", field, h, half_line()?, vec![x0])?;
    let costs = CostField::new(Arc::new(|x: &[f64], _u: &[f64]| x[0].abs()), Arc::new(|x: &[f64]| x[0].abs()), 1.0);
    Ok(ControlProblem::new(sys, costs, vec![vec![-1.0], vec![1.0]], (0.0, horizon))?)
}

fn moving_interval(p: &Params) -> Result<MovingConstraintProblem, LibraryError> {
    let r = Reader::new("moving-interval", p, &["drift", "sigma", "x0", "growth", "horizon"])?;
    let drift = r.scalar("drift", 1.0)?;
    let sigma = r.scalar("sigma", 0.5)?;
    let x0 = r.scalar("x0", 0.5)?;
    let growth = r.scalar("growth", 1.0)?;
    let horizon = r.positive("horizon", 1.0)?;
    let field = scalar_field(move |_, _, _| drift, sigma, 0, 1e-12)?;
    let path = MatrixFamily::Affine { base: vec![vec![1.0]], slope: vec![vec![growth]] }.field((0.0, horizon))?;
    let base = ConvexConstraint::indicator(Geometry::boxed(vec![0.0], vec![1.0]))?;
    Ok(MovingConstraintProblem::new(base, path, field, vec![x0], (0.0, horizon))?)
}

pub fn build(name: &str, params: &Params) -> Result<Bundled, LibraryError> {
    Ok(match name {
        "oblique-ball" => Bundled::System(oblique_ball(params, false)?),
        "oblique-ball-strong" => Bundled::System(oblique_ball(params, true)?),
        "ou" => Bundled::System(ou(params)?),
        "reflected-bm" => Bundled::System(reflected_bm(params)?),
        "ball-bm" => Bundled::System(ball_bm(params)?),
        "linear" => Bundled::Control(linear(params)?),
        "two-control" => Bundled::Control(two_control(params)?),
        "moving-interval" => Bundled::Moving(moving_interval(params)?),
        _ => return Err(LibraryError::Unknown { name: name.into() }),
    })
}

pub fn system(name: &str, params: &Params) -> Result<System, LibraryError> {
    match build(name, params)? {
        Bundled::Moving(_) => Err(LibraryError::WrongKind { name: name.into(), kind: "simulated system" }),
        b => Ok(b.system().expect("system-backed entry").clone()),
    }
}

pub fn control_problem(name: &str, params: &Params) -> Result<ControlProblem, LibraryError> {
    match build(name, params)? {
        Bundled::Control(p) => Ok(p),
        _ => Err(LibraryError::WrongKind { name: name.into(), kind: "control problem" }),
    }
}

pub fn moving_problem(name: &str, params: &Params) -> Result<MovingConstraintProblem, LibraryError> {
    match build(name, params)? {
        Bundled::Moving(p) => Ok(p),
        _ => Err(LibraryError::WrongKind { name: name.into(), kind: "moving-constraint problem" }),
    }
}

fn text(name: &str) -> Option<&'static str> {
    Some(match name {
        "oblique-ball" => "\
Two-dimensional law-dependent system on the unit ball (parameters: x0, radius).
  H(x, mu) = diag(sin x1 + 5 + cos W2(mu, d0), exp(cos x2) + 4 + min(W2(mu, d0), 1))
  f(x, mu) = (sqrt(|x|^2 + 5) - sqrt 5 + W2(mu, d0)) * (1, 1)
  g(x, mu) = (exp(min(|x|, 1)) - 1 + sin W2(mu, d0)) * I
  f and g are shifted so they vanish at (0, d0).
  Declared constants: L = sqrt2 (1 + e), a_H = 3, b_H = 5 + e.
  Law-dependent H, so only weak solutions are covered.",
        "oblique-ball-strong" => "\
Two-dimensional system on the unit ball with state-only H (parameters: x0, radius).
  H(x) = diag(sin x1 + 5, exp(min(x2, 1)) + 4 + cos x2)
  f, g as in oblique-ball.
  Declared constants: L = sqrt2 (1 + e), a_H = 3, b_H = 5 + e.
  State-only H, so strong solutions are covered.",
        "ou" => "\
One-dimensional reflected Ornstein-Uhlenbeck process on [0, inf) (parameters: theta, sigma, coupling, x0, h).
  f(x, mu) = -theta x + coupling (mean(mu) - x),  g = sigma,  H = h.
  Defaults theta = 1, sigma = 1, coupling = 0, x0 = 0.5, h = 1.
  Declared constants: L = |theta| + 2|coupling|, a_H = b_H = h.",
        "reflected-bm" => "\
Brownian motion reflected at 0 on [0, inf) (parameters: sigma, x0).
  f = 0, g = sigma, H = 1; defaults sigma = 1, x0 = 0.
  E x(T) = sigma sqrt(2T/pi) when x0 = 0.",
        "ball-bm" => "\
Planar Brownian motion in a ball with constant oblique reflection (parameters: sigma, x0, radius).
  f = 0, g = sigma I, H = [[1.5, 0.3], [0.3, 1.0]].
  Declared constants: a_H, b_H = extreme eigenvalues of H.",
        "linear" => "\
One-dimensional linear control problem on [0, inf) (parameters: a, sigma, x0, horizon).
  f(x, u) = a x + u with u in {-1, 0, 1},  g = sigma,  H = 1.
  b(x, u) = x,  alpha(x) = x.  Defaults a = 0, sigma = 0, x0 = 5, horizon = 1.",
        "two-control" => "\
One-dimensional two-control problem on [0, inf) (parameters: sigma, x0, coupling, horizon, h-rate).
  f(x, mu, u) = u + coupling (mean(mu) - x) with u in {-1, +1},  g = sigma,  H(t) = 1 + h-rate t.
  b(x, u) = |x|,  alpha(x) = |x|.  Defaults sigma = 0, x0 = 0.5, coupling = 0, horizon = 1, h-rate = 0.5.",
        "moving-interval" => "\
Moving interval [0, 1 + growth t] (parameters: drift, sigma, x0, growth, horizon).
  f = drift,  g = sigma,  base set [0, 1],  H(t) = 1 + growth t.
  Reduced to an oblique problem on [0, 1] with matrix H(t)^-2.
  Defaults drift = 1, sigma = 0.5, x0 = 0.5, growth = 1, horizon = 1.",
        _ => return None,
    })
}

/// Human-readable description of a bundled system.
pub fn describe(name: &str) -> Result<String, LibraryError> {
    let body = text(name).ok_or_else(|| LibraryError::Unknown { name: name.into() })?;
    Ok(format!("{name}\n{body}\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_names_build_with_defaults() {
        for name in NAMES {
            build(name, &Params::new()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(describe(name).unwrap().starts_with(name));
        }
        assert!(matches!(build("nope", &Params::new()), Err(LibraryError::Unknown { .. })));
        assert!(describe("nope").unwrap_err().to_string().contains("oblique-ball"));
    }

    #[test]
    fn unknown_parameters_rejected() {
        let mut p = Params::new();
        p.insert("thta".into(), ParamValue::Scalar(1.0));
        assert!(matches!(build("ou", &p), Err(LibraryError::UnknownParam { .. })));
        let mut p = Params::new();
        p.insert("x0".into(), ParamValue::Vector(vec![1.0]));
        assert!(matches!(build("oblique-ball", &p), Err(LibraryError::BadParam { .. })));
    }

    #[test]
    fn oblique_ball_vanishes_at_origin() {
        let sys = system("oblique-ball", &Params::new()).unwrap();
        sys.coefficients.check_normalization(&[vec![]]).unwrap();
        assert!(sys.coefficients.is_normalized());
    }
}

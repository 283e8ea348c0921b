use std::sync::Arc;

use oblique_mv::convex::{ConvexConstraint, Geometry};
use oblique_mv::dynamics::{CoefficientField, ObliqueField, System};
use oblique_mv::library::{self, Params};
use oblique_mv::linalg::Matrix;
use oblique_mv::solver::*;

fn half_line() -> ConvexConstraint {
    ConvexConstraint::indicator(Geometry::half_line()).unwrap()
}

/// `f = c`, `g = σ` in one dimension on `[0, ∞)` with `H = h`.
fn constant_system(c: f64, sigma: f64, h: f64, x0: f64) -> System {
    let field = CoefficientField::affine(
        1,
        1,
        0,
        Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = c),
        Arc::new(move |_, _, _, _, out: &mut [f64]| out[0] = sigma),
        1.0,
    )
    .unwrap();
    let oblique = ObliqueField::constant(Matrix::from_diag(&[h])).unwrap();
    System::new("constant", field, oblique, half_line(), vec![x0]).unwrap()
}

#[test]
fn zero_coefficients_at_origin_stay_put() {
    let sys = constant_system(0.0, 0.0, 1.0, 0.0);
    for scheme in [Scheme::Projected, Scheme::Penalized { epsilon: 0.1 }] {
        let ens = simulate(&sys, scheme, &TimeGrid::unit(32), 3, 2, &NoiseSource::new(1), None).unwrap();
        for p in ens.paths() {
            assert!(p.states().all(|x| x[0] == 0.0));
            assert!((0..p.nodes()).all(|j| p.reflection(j)[0] == 0.0));
        }
    }
}

#[test]
fn projected_drift_into_wall() {
    // x(t) = max(0.5 − t, 0); with dx + dk = f dt, k(1) = −0.5.
    let sys = constant_system(-1.0, 0.0, 1.0, 0.5);
    let grid = TimeGrid::unit(64);
    let ens = simulate_projected(&sys, &grid, 1, 1, &NoiseSource::new(2)).unwrap();
    let p = ens.path(0, 0);
    for j in 0..p.nodes() {
        let exact = (0.5 - grid.node(j)).max(0.0);
        assert!((p.state(j)[0] - exact).abs() < 1e-12, "node {j}");
    }
    assert!((p.reflection(64)[0] + 0.5).abs() < 1e-12);
}

#[test]
fn oblique_factor_scales_reflection_not_state() {
    // In one dimension the Skorohod step is still the projection; H only
    // rescales Δk.
    let a = simulate_projected(&constant_system(-1.0, 0.0, 1.0, 0.5), &TimeGrid::unit(64), 1, 1, &NoiseSource::new(3)).unwrap();
    let b = simulate_projected(&constant_system(-1.0, 0.0, 2.0, 0.5), &TimeGrid::unit(64), 1, 1, &NoiseSource::new(3)).unwrap();
    let (pa, pb) = (a.path(0, 0), b.path(0, 0));
    for j in 0..pa.nodes() {
        assert_eq!(pa.state(j), pb.state(j));
        assert!((pa.reflection(j)[0] - 2.0 * pb.reflection(j)[0]).abs() < 1e-12);
    }
}

#[test]
fn penalized_relaxation_from_outside() {
    // dx = −x/ε dt for x < 0 relaxes like e^{−t/ε}; Euler gives (1 − h/ε)^n.
    let eps = 0.25;
    let sys = constant_system(0.0, 0.0, 1.0, 0.0);
    let grid = TimeGrid::unit(256);
    let mut s = Stepper::with_initial(&sys, Scheme::Penalized { epsilon: eps }, grid, 1, 0, None, &[-1.0]).unwrap();
    let dw = [0.0];
    let ratio = 1.0 - grid.h() / eps;
    for n in 1..=256 {
        s.advance(&dw).unwrap();
        assert!((s.state(0)[0] + ratio.powi(n)).abs() < 1e-12);
    }
    let exact = -(-1.0_f64 / eps).exp();
    assert!((s.state(0)[0] - exact).abs() < 2e-3);
}

#[test]
fn penalized_steady_state_under_constant_push() {
    // f = −c balances −H x/ε at x = −cε/H.
    let (c, h, eps) = (1.0, 2.0, 0.05);
    let sys = constant_system(-c, 0.0, h, 0.0);
    let ens = simulate_penalized(&sys, eps, &TimeGrid::unit(1024), 1, 1, &NoiseSource::new(4)).unwrap();
    let x = ens.path(0, 0).final_state()[0];
    assert!((x + c * eps / h).abs() < 1e-10, "{x}");
}

#[test]
fn unstable_penalized_step_is_rejected() {
    let sys = constant_system(0.0, 1.0, 2.0, 0.0);
    let err = Stepper::new(&sys, Scheme::Penalized { epsilon: 0.01 }, TimeGrid::unit(16), 1, 0, None).err().unwrap();
    assert!(matches!(err, SolverError::Unstable { .. }));
}

#[test]
fn projected_paths_stay_feasible() {
    let sys = library::system("ball-bm", &Params::new()).unwrap();
    let ens = simulate_projected(&sys, &TimeGrid::unit(256), 16, 2, &NoiseSource::new(5)).unwrap();
    for p in ens.paths() {
        for x in p.states() {
            assert!(sys.constraint.domain_distance(x) < 1e-10);
        }
    }
}

#[test]
fn same_seed_same_bytes_other_seed_differs() {
    let sys = library::system("oblique-ball", &Params::new()).unwrap();
    let run = |seed| {
        let mut out = Vec::new();
        simulate_projected(&sys, &TimeGrid::unit(32), 4, 3, &NoiseSource::new(seed)).unwrap().write_csv(&mut out).unwrap();
        out
    };
    assert_eq!(run(9), run(9));
    assert_ne!(run(9), run(10));
}

#[test]
fn iteration_with_constant_coefficients_settles_at_once() {
    // Nothing depends on the previous iterate, so every iterate after the
    // first reproduces it.
    let sys = constant_system(-0.5, 0.7, 1.0, 0.2);
    let grid = TimeGrid::unit(64);
    let noise = NoiseSource::new(6);
    let rep = euler_iteration(&sys, &grid, 4, 2, &noise, 3, LevelSchedule::Refining { start: 2 }, true).unwrap();
    assert_eq!(rep.levels, vec![2, 3, 4]);
    assert!(rep.mean_sup_dist_sq[0] > 0.0);
    assert_eq!(&rep.mean_sup_dist_sq[1..], &[0.0, 0.0]);
    let direct = simulate_projected(&sys, &grid, 4, 2, &noise).unwrap();
    for (a, b) in direct.paths().zip(rep.iterates[0].paths()) {
        assert_eq!(a.sup_dist_sq(b), 0.0);
    }
}

#[test]
fn mean_field_iteration_contracts() {
    let sys = library::system("ou", &{
        let mut p = Params::new();
        p.insert("coupling".into(), library::ParamValue::Scalar(1.0));
        p
    })
    .unwrap();
    let rep = euler_iteration(&sys, &TimeGrid::unit(128), 32, 2, &NoiseSource::new(7), 5, LevelSchedule::Fixed { level: 7 }, false)
        .unwrap();
    let d = &rep.mean_sup_dist_sq;
    assert!(d[4] < d[1], "{d:?}");
}

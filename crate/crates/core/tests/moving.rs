use std::sync::Arc;

use oblique_mv::convex::{ConvexConstraint, Geometry};
use oblique_mv::dynamics::CoefficientField;
use oblique_mv::library::{self, Params};
use oblique_mv::solver::{simulate_projected, NoiseSource, TimeGrid};
use oblique_mv::timedep::*;

fn rotating_ellipse() -> MovingConstraintProblem {
    let field = CoefficientField::affine(
        2,
        2,
        0,
        Arc::new(|_, x, _, _, out: &mut [f64]| {
            out[0] = 0.5 - x[1];
            out[1] = x[0];
        }),
        Arc::new(|_, _, _, _, out: &mut [f64]| out.copy_from_slice(&[0.4, 0.0, 0.0, 0.4])),
        1.0,
    )
    .unwrap();
    let path = MatrixFamily::RotationScaled { axes: [1.0, 2.0], angular_speed: 1.5 }.field((0.0, 1.0)).unwrap();
    let ball = ConvexConstraint::indicator(Geometry::ball(vec![0.0, 0.0], 1.0)).unwrap();
    MovingConstraintProblem::new(ball, path, field, vec![0.2, 0.1], (0.0, 1.0)).unwrap()
}

#[test]
fn lifted_rotating_solution_stays_in_moving_set() {
    let prob = rotating_ellipse();
    for form in [CorrectionForm::ChainRule, CorrectionForm::Additive, CorrectionForm::DriftOnly] {
        let reduced = reduce_time_dependent(&prob, form).unwrap();
        assert!(!reduced.finite_difference);
        let ens = simulate_projected(&reduced.system, &TimeGrid::new(0.0, 1.0, 128).unwrap(), 8, 2, &NoiseSource::new(1)).unwrap();
        let lifted = lift_solution(&ens, &prob.path).unwrap();
        for p in lifted.paths() {
            for (j, &t) in p.times().iter().enumerate() {
                assert!(prob.moving_distance(t, p.state(j)).unwrap() < 1e-8);
            }
        }
    }
}

#[test]
fn bundled_interval_reduction_converges() {
    let prob = library::moving_problem("moving-interval", &Params::new()).unwrap();
    let rep = equivalence_check(&prob, CorrectionForm::ChainRule, &[64, 128, 256], 16, 4, &NoiseSource::new(2)).unwrap();
    assert!(rep.reduced_oblique_ok);
    assert_eq!(rep.monotone, Some(true));
    assert!(rep.max_feasibility() < 1e-8);
}

#[test]
fn exponential_family_is_scaled_identity() {
    let fam = MatrixFamily::Exponential { dim: 2, scale: 1.0, rate: 0.5 };
    let field = fam.field((0.0, 2.0)).unwrap();
    let h = field.at_time(2.0).unwrap();
    assert!((h.as_slice()[0] - 1.0_f64.exp()).abs() < 1e-12);
    assert_eq!(h.as_slice()[1], 0.0);
}

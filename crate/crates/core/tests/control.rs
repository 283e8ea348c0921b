use oblique_mv::control::*;
use oblique_mv::library::{self, ParamValue, Params};
use oblique_mv::solver::Scheme;
use proptest::prelude::*;

fn linear() -> ControlProblem {
    library::control_problem("linear", &Params::new()).unwrap()
}

fn noisy_two_control() -> ControlProblem {
    let mut p = Params::new();
    p.insert("sigma".into(), ParamValue::Scalar(0.5));
    library::control_problem("two-control", &p).unwrap()
}

#[test]
fn linear_problem_matches_closed_form() {
    // Full push down: x = 5 − t, cost ∫(5 − t) dt + x(1) = 4.5 + 4.
    let mut cfg = SimConfig::new(1.0 / 64.0, 2, 2, 1);
    cfg.switches = 2;
    let v = value(&linear(), Scheme::Projected, &cfg).unwrap();
    assert!((v.value - 8.5).abs() < 1e-10, "{}", v.value);
    assert_eq!(v.mc_stderr, 0.0);
    assert!(v.control.values().iter().all(|u| u == &[-1.0]));
    assert_eq!(v.family_costs.len(), 27);
}

#[test]
fn larger_control_set_never_costs_more() {
    let prob = noisy_two_control();
    let cfg = SimConfig::new(1.0 / 128.0, 16, 8, 2);
    let all = value(&prob, Scheme::Projected, &cfg).unwrap();
    for u in [-1.0, 1.0] {
        let one = value(&prob.with_controls(vec![vec![u]]).unwrap(), Scheme::Projected, &cfg).unwrap();
        assert!(all.value <= one.value + 1e-12);
    }
}

#[test]
fn singleton_dpp_is_exact_without_noise() {
    let prob = linear().with_controls(vec![vec![-1.0]]).unwrap();
    let cfg = SimConfig::new(1.0 / 64.0, 4, 2, 3);
    let rep = dpp_residual(&prob, 0.5, Scheme::Projected, &cfg).unwrap();
    assert!(rep.residual < 1e-10, "{rep:?}");
    assert!((rep.lhs - 8.5).abs() < 1e-10);
    assert!(rep.passed());
}

#[test]
fn noisy_dpp_within_allowance() {
    let cfg = SimConfig::new(1.0 / 128.0, 16, 16, 4);
    let rep = dpp_residual(&noisy_two_control(), 0.5, Scheme::Projected, &cfg).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn family_budget_guard() {
    let mut cfg = SimConfig::new(1.0 / 64.0, 1, 1, 5);
    cfg.switches = 20;
    assert!(matches!(value(&linear(), Scheme::Projected, &cfg), Err(ControlError::Config(_))));
}

#[test]
fn value_rate_needs_a_ladder() {
    let cfg = SimConfig::new(1.0 / 64.0, 1, 1, 6);
    assert!(value_rate_probe(&linear(), &[0.1, 0.05], &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scaling_costs_scales_value_and_keeps_argmin(c in 0.1_f64..10.0, seed in 0_u64..1000) {
        let prob = noisy_two_control();
        let cfg = SimConfig::new(1.0 / 64.0, 8, 4, seed);
        let base = value(&prob, Scheme::Projected, &cfg).unwrap();
        let scaled = value(&prob.with_costs(prob.costs.scaled(c)).unwrap(), Scheme::Projected, &cfg).unwrap();
        prop_assert!((scaled.value - c * base.value).abs() <= 1e-9 * (1.0 + scaled.value.abs()));
        prop_assert!((scaled.mc_stderr - c * base.mc_stderr).abs() <= 1e-9 * (1.0 + scaled.mc_stderr));
        prop_assert_eq!(scaled.control, base.control);
    }

    #[test]
    fn kmeans_assigns_each_point_to_nearest_center(points in prop::collection::vec(-5.0_f64..5.0, 4..60), k in 1_usize..5) {
        let (centers, assign) = kmeans(&points, 1, k);
        prop_assert!(centers.len() <= k);
        for (x, &a) in points.iter().zip(&assign) {
            let d = (x - centers[a][0]).abs();
            prop_assert!(centers.iter().all(|c| (x - c[0]).abs() >= d - 1e-12));
        }
    }
}

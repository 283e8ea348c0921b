//! Randomized invariants of the geometric and measure-theoretic building
//! blocks.

use oblique_mv::convex::{check_yosida_properties, ConvexConstraint, Geometry, HalfSpace};
use oblique_mv::linalg::{dist, dot, Matrix};
use oblique_mv::measures::{wasserstein2, wasserstein2_assignment, wasserstein2_sorted, EmpiricalMeasure};
use oblique_mv::solver::{oblique_skorohod_step, NoiseSource, ParticleNoise, TimeGrid};
use proptest::prelude::*;

fn point(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0_f64..4.0, m)
}

fn geometry() -> impl Strategy<Value = Geometry> {
    prop_oneof![
        Just(Geometry::ball(vec![0.3, -0.2], 1.5)),
        Just(Geometry::boxed(vec![-1.0, -0.5], vec![2.0, 0.5])),
        Just(Geometry::half_space(vec![1.0, 2.0], 0.5).unwrap()),
        Just(Geometry::polytope(vec![
            HalfSpace::new(vec![1.0, 1.0], 1.0).unwrap(),
            HalfSpace::new(vec![-1.0, 0.5], 0.7).unwrap(),
            HalfSpace::new(vec![0.0, -1.0], 2.0).unwrap(),
        ])),
    ]
}

/// SPD matrix `LLᵀ + 0.5 I` from three free entries.
fn spd() -> impl Strategy<Value = Matrix> {
    (0.2_f64..2.0, -1.0_f64..1.0, 0.2_f64..2.0).prop_map(|(a, b, c)| {
        Matrix::from_rows(&[&[a * a + 0.5, a * b], &[a * b, b * b + c * c + 0.5]])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn projection_is_idempotent_and_nonexpansive(g in geometry(), x in point(2), y in point(2)) {
        let c = ConvexConstraint::indicator(g).unwrap();
        let (px, py) = (c.project(&x).unwrap(), c.project(&y).unwrap());
        let ppx = c.project(&px).unwrap();
        prop_assert!(dist(&px, &ppx) < 1e-8);
        prop_assert!(dist(&px, &py) <= dist(&x, &y) + 1e-8);
        prop_assert!(c.domain_distance(&px) < 1e-8);
    }

    #[test]
    fn yosida_properties_hold(g in geometry(), xs in prop::collection::vec(point(2), 2..6), e1 in 0.01_f64..1.0, e2 in 0.01_f64..1.0) {
        let c = ConvexConstraint::indicator(g).unwrap();
        let rep = check_yosida_properties(&c, &[e1, e2], &xs).unwrap();
        prop_assert!(rep.max_violation() < 1e-8, "{:?}", rep.failures());
    }

    #[test]
    fn skorohod_step_is_feasible_with_oblique_normal(g in geometry(), h in spd(), y in point(2)) {
        let c = ConvexConstraint::indicator(g).unwrap();
        let (x, dk) = oblique_skorohod_step(&c, &h, &y).unwrap();
        prop_assert!(c.domain_distance(&x) < 1e-8);
        // y − x = H Δk with Δk in the normal cone at x: ⟨Δk, z − x⟩ ≤ 0 on the set.
        let hdk = h.mul_vec(&dk);
        for (a, b) in y.iter().zip(&x).zip(&hdk).map(|((y, x), v)| (y - x, *v)) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        for z in [vec![0.0, 0.0], c.project(&[3.0, 3.0]).unwrap(), c.project(&[-3.0, 1.0]).unwrap()] {
            let d: Vec<f64> = z.iter().zip(&x).map(|(z, x)| z - x).collect();
            prop_assert!(dot(&dk, &d) <= 1e-8);
        }
    }

    #[test]
    fn wasserstein_is_a_metric(a in prop::collection::vec(-3.0_f64..3.0, 12), b in prop::collection::vec(-3.0_f64..3.0, 12), c in prop::collection::vec(-3.0_f64..3.0, 12)) {
        let mu = |v: &[f64]| EmpiricalMeasure::uniform(2, v.to_vec()).unwrap();
        let (ma, mb, mc) = (mu(&a), mu(&b), mu(&c));
        let ab = wasserstein2(&ma, &mb).unwrap();
        prop_assert!((ab - wasserstein2(&mb, &ma).unwrap()).abs() < 1e-10);
        prop_assert!(wasserstein2(&ma, &ma).unwrap() < 1e-10);
        prop_assert!(ab <= wasserstein2(&ma, &mc).unwrap() + wasserstein2(&mc, &mb).unwrap() + 1e-10);
        prop_assert!((ab - wasserstein2_assignment(&ma, &mb).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn sorted_coupling_matches_assignment_in_one_dimension(a in prop::collection::vec(-3.0_f64..3.0, 1..10), shift in -1.0_f64..1.0) {
        let b: Vec<f64> = a.iter().rev().map(|x| 0.5 * x + shift).collect();
        let (ma, mb) = (EmpiricalMeasure::uniform(1, a).unwrap(), EmpiricalMeasure::uniform(1, b).unwrap());
        let s = wasserstein2_sorted(&ma, &mb).unwrap();
        prop_assert!((s - wasserstein2_assignment(&ma, &mb).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn coarse_noise_sums_fine_noise(seed in any::<u64>(), rep in 0_usize..4) {
        let fine = TimeGrid::unit(16);
        let coarse = TimeGrid::unit(4);
        let src = NoiseSource::new(seed).with_resolution(16);
        let mut nf = ParticleNoise::new(&src, rep, 2, 1, &fine).unwrap();
        let mut nc = ParticleNoise::new(&src, rep, 2, 1, &coarse).unwrap();
        let (mut f, mut c) = (vec![0.0; 2], vec![0.0; 2]);
        for _ in 0..4 {
            let mut acc = [0.0; 2];
            for _ in 0..4 {
                nf.fill(&mut f);
                acc[0] += f[0];
                acc[1] += f[1];
            }
            nc.fill(&mut c);
            prop_assert!((acc[0] - c[0]).abs() < 1e-12 && (acc[1] - c[1]).abs() < 1e-12);
        }
    }
}

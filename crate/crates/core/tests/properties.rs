mod common;

use common::{arb_model, arb_path};
use pdmp_core::average::optimality_residual;
use pdmp_core::discounted::{value_iteration, MONOTONE_TOL};
use pdmp_core::flow::{check_semigroup, hit_time};
use pdmp_core::grid::{Grid, ValueField};
use pdmp_core::model::ModelSpec;
use pdmp_core::operators::{
    apply_bellman, decompose_check, discounted_continuation, path_functionals,
    relaxed_one_stage_check, QUAD_TOL,
};
use proptest::prelude::*;

fn grid(m: &ModelSpec) -> Grid {
    Grid::uniform(&m.domain, 21).unwrap()
}

fn field(g: &Grid, coeffs: (f64, f64, f64)) -> ValueField {
    ValueField::from_fn(g, |x| coeffs.0 + coeffs.1 * x + coeffs.2 * (7.0 * x).sin())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn normalization_identity(
        (m, path) in arb_model().prop_flat_map(|m| { let n = m.action_count(); (Just(m), arb_path(n)) }),
        x in 0.05..0.95f64,
        alpha in 0.0..2.0f64,
    ) {
        let g = grid(&m);
        let one = ValueField::constant(&g, 1.0);
        let f = path_functionals(&m, x, &path, alpha, Some(&one)).unwrap();
        let total = f.continuation.unwrap() + alpha * f.sojourn + f.tail;
        prop_assert!((total - 1.0).abs() <= 5.0 * QUAD_TOL, "{total}");
    }

    #[test]
    fn split_at_any_time(
        (m, path) in arb_model().prop_flat_map(|m| { let n = m.action_count(); (Just(m), arb_path(n)) }),
        x in 0.05..0.95f64,
        frac in 0.05..0.95f64,
        alpha in 0.1..2.0f64,
        c in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
    ) {
        let g = grid(&m);
        let t = frac * hit_time(&m, x).value().min(2.0);
        let r = decompose_check(&m, x, &path, t, alpha, &field(&g, c)).unwrap();
        prop_assert!(r.max() <= 1e-6, "{r:?}");
    }

    #[test]
    fn flow_semigroup(m in arb_model(), x in 0.05..0.95f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let t_star = hit_time(&m, x).value().min(5.0);
        let (t, s) = (a * t_star * 0.5, b * t_star * 0.5);
        prop_assert!(check_semigroup(&m, &[(x, t, s)]) <= 1e-6);
    }

    #[test]
    fn continuation_is_monotone(
        (m, path) in arb_model().prop_flat_map(|m| { let n = m.action_count(); (Just(m), arb_path(n)) }),
        x in 0.05..0.95f64,
        alpha in 0.0..2.0f64,
        c in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        bump in prop::collection::vec(0.0..1.0f64, 21),
    ) {
        let g = grid(&m);
        let h1 = field(&g, c);
        let mut h2 = h1.clone();
        for (v, d) in h2.values.iter_mut().zip(&bump) {
            *v += d;
        }
        let g1 = discounted_continuation(&m, x, &path, alpha, &h1).unwrap();
        let g2 = discounted_continuation(&m, x, &path, alpha, &h2).unwrap();
        prop_assert!(g1 <= g2 + 1e-12, "{g1} > {g2}");
    }

    #[test]
    fn bellman_is_monotone(
        m in arb_model(),
        alpha in 0.0..2.0f64,
        rho in 0.0..2.0f64,
        c in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        bump in prop::collection::vec(0.0..1.0f64, 21),
    ) {
        let g = grid(&m);
        let h1 = field(&g, c);
        let mut h2 = h1.clone();
        for (v, d) in h2.values.iter_mut().zip(&bump) {
            *v += d;
        }
        let w1 = apply_bellman(&m, &g, alpha, rho, &h1).unwrap();
        let w2 = apply_bellman(&m, &g, alpha, rho, &h2).unwrap();
        for (a, b) in w1.values.iter().zip(&w2.values) {
            prop_assert!(*a <= b + 1e-12, "{a} > {b}");
        }
    }

    #[test]
    fn relaxed_controls_do_not_help(
        m in arb_model(),
        x in 0.05..0.95f64,
        alpha in 0.0..2.0f64,
        c in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        seed in any::<u64>(),
    ) {
        let g = grid(&m);
        let gap = relaxed_one_stage_check(&m, x, alpha, 0.5, &field(&g, c), 50, seed).unwrap();
        prop_assert!(gap.min_gap >= -1e-12);
        prop_assert_eq!(gap.vertex_gap, 0.0);
    }

    #[test]
    fn adding_a_constant_to_h_shifts_the_residual(
        m in arb_model(),
        c in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        k in -3.0..3.0f64,
    ) {
        // Without discount T(rho, h + k) = T(rho, h) + k.
        let g = grid(&m);
        let h = field(&g, c);
        let r1 = optimality_residual(&m, &g, 0.3, &h).unwrap();
        let r2 = optimality_residual(&m, &g, 0.3, &h.map(|v| v + k)).unwrap();
        prop_assert!(r1.sup_distance(&r2) <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn value_iteration_increases(m in arb_model(), alpha in 0.5..2.0f64) {
        let g = grid(&m);
        let sol = value_iteration(&m, &g, alpha, 1e-6, 10_000).unwrap();
        prop_assert!(sol.min_increments.iter().all(|d| *d >= -MONOTONE_TOL));
        prop_assert!(sol.residual <= 1e-6);
        prop_assert!(sol.value.inf() >= 0.0);
    }
}

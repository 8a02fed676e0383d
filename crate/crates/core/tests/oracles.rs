//! Solver output against closed forms derived by hand.

use pdmp_core::average::{vanishing_sweep, SweepOptions};
use pdmp_core::discounted::value_iteration;
use pdmp_core::fixtures;
use pdmp_core::grid::Grid;
use pdmp_core::model::Action;
use pdmp_core::simulate::{mc_average_cost, ControlStrategy};

/// decay1d: `J(x) = x / (a + 2) + J(1/2) / (a + 1)` with
/// `J(1/2) = (a + 1) / (2 a (a + 2))`.
fn decay_value(alpha: f64, x: f64) -> f64 {
    let j_half = (alpha + 1.0) / (2.0 * alpha * (alpha + 2.0));
    x / (alpha + 2.0) + j_half / (alpha + 1.0)
}

/// cycle1d with a0 only: pay 1 per unit time up to x = 1, then 0.5 and
/// restart from 1/2.
fn cycle_a0_value(alpha: f64, x: f64) -> f64 {
    let d = (-0.5 * alpha).exp();
    let j_half = ((1.0 - d) / alpha + 0.5 * d) / (1.0 - d);
    let e = (-alpha * (1.0 - x)).exp();
    (1.0 - e) / alpha + e * (0.5 + j_half)
}

#[test]
fn decay_discounted_matches_closed_form() {
    let m = fixtures::decay1d();
    let g = Grid::uniform(&m.domain, 201).unwrap();
    for alpha in [0.5, 1.0] {
        let sol = value_iteration(&m, &g, alpha, 1e-7, 100_000).unwrap();
        for (x, v) in g.nodes().iter().zip(&sol.value.values) {
            assert!((v - decay_value(alpha, *x)).abs() < 1e-3, "alpha {alpha} x {x}: {v}");
        }
    }
    assert!((decay_value(0.5, 0.3) - (0.4 * 0.3 + 0.4)).abs() < 1e-15);
}

#[test]
fn cycle_a0_discounted_matches_renewal() {
    let m = fixtures::cycle1d_a0();
    let g = Grid::uniform(&m.domain, 201).unwrap();
    for alpha in [0.1, 1.0, 3.0] {
        let sol = value_iteration(&m, &g, alpha, 1e-8, 100_000).unwrap();
        for (x, v) in g.nodes().iter().zip(&sol.value.values) {
            assert!((v - cycle_a0_value(alpha, *x)).abs() < 1e-3, "alpha {alpha} x {x}: {v}");
        }
    }
}

#[test]
fn decay_average_cost_and_bias() {
    let m = fixtures::decay1d();
    let g = Grid::uniform(&m.domain, 51).unwrap();
    let sol = vanishing_sweep(&m, &g, &SweepOptions::default()).unwrap();
    for p in &sol.sweep_trace {
        let exact = 0.5 * (p.alpha + 1.0) / (p.alpha + 2.0);
        assert!((p.rho - exact).abs() < 1e-3, "alpha {}: {} vs {exact}", p.alpha, p.rho);
    }
    assert!((sol.rho - 0.25).abs() < 1e-3);
    for (x, v) in g.nodes().iter().zip(&sol.h.values) {
        assert!((v - 0.5 * (x - 0.5)).abs() < 1e-3, "x {x}: {v}");
    }
    assert!(sol.residual_max <= 1e-3);
}

/// Best long-run average cost of cycle1d over one-switch policies on the
/// visited interval [1/2, 1), by renewal-reward.
fn threshold_oracle() -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..=1000 {
        let theta = 0.5 + 0.5 * i as f64 / 1000.0;
        let (d, l) = (theta - 0.5, 1.0 - theta);
        // a0 on [1/2, theta), a1 after.
        let s = 1.0 - (-l).exp();
        let a = (d + 0.8 * s + 0.5 * (-l).exp()) / (d + s);
        // a1 on [1/2, theta), a0 after.
        let q = (-d).exp();
        let b = (0.8 * (1.0 - q) + q * (l + 0.5)) / ((1.0 - q) + q * l);
        best = best.min(a).min(b);
    }
    best
}

#[test]
fn two_action_cycle_average_is_optimal() {
    let oracle = threshold_oracle();
    let always_jump = 0.8 + 0.5 * (-0.5f64).exp() / (1.0 - (-0.5f64).exp());
    assert!(oracle <= always_jump + 1e-12);

    let m = fixtures::cycle1d();
    let g = Grid::uniform(&m.domain, 51).unwrap();
    let opts = SweepOptions {
        schedule: pdmp_core::average::default_schedule()[..7].to_vec(),
        ..SweepOptions::default()
    };
    let sol = vanishing_sweep(&m, &g, &opts).unwrap();
    assert!((sol.rho - oracle).abs() < 1e-2, "{} vs {oracle}", sol.rho);
    assert!(sol.rho <= 2.0 + 1e-2);
    assert!(sol.residual_max <= 1e-3);
    for (x, a) in g.nodes().iter().zip(&sol.policy.interior) {
        if *x >= 0.5 {
            assert_eq!(*a, Action(1), "x {x}");
        }
    }
    let mc = mc_average_cost(&m, sol.x0, &ControlStrategy::Feedback(sol.policy), 200.0, 200, 5).unwrap();
    assert!((mc.mean - sol.rho).abs() <= 3.0 * mc.stderr + 1e-2, "{mc:?}");
}

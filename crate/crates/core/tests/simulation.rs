use pdmp_core::fixtures;
use pdmp_core::flow::ControlPath;
use pdmp_core::model::Action;
use pdmp_core::simulate::{
    jump_time_from_uniform, mc_average_cost, mc_discounted_cost, mc_truncated_cost,
    sample_jump_time, sample_trajectory, ControlStrategy, JumpCause,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Kolmogorov–Smirnov statistic `sqrt(n) D_n` against the CDF `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    n.sqrt() * d
}

#[test]
fn first_jump_time_is_exponential() {
    // decay1d never reaches the boundary and jumps at rate 1.
    let m = fixtures::decay1d();
    let s = ControlStrategy::constant(Action(0));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let times: Vec<f64> = (0..10_000)
        .map(|_| {
            let (t, cause) = sample_jump_time(&m, 0.5, &s, &mut rng).unwrap();
            assert_eq!(cause, JumpCause::Spontaneous);
            t
        })
        .collect();
    // 1% critical value of the limiting distribution.
    assert!(ks_statistic(times, |t| 1.0 - (-t).exp()) < 1.628);
}

#[test]
fn forced_jump_probability() {
    let m = fixtures::cycle1d();
    let s = ControlStrategy::constant(Action(1));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let forced = (0..n)
        .filter(|_| sample_jump_time(&m, 0.3, &s, &mut rng).unwrap().1 == JumpCause::Boundary)
        .count();
    let p = (-0.7f64).exp();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((forced as f64 / n as f64 - p).abs() < 4.0 * se);
}

#[test]
fn inversion_is_monotone_in_the_uniform() {
    let m = fixtures::cycle1d();
    let path = ControlPath::new(vec![0.0, 0.2], vec![Action(1), Action(0)], Action(0)).unwrap();
    let mut prev = f64::INFINITY;
    for k in 1..=50 {
        let u = k as f64 / 50.0;
        let (t, _) = jump_time_from_uniform(&m, 0.1, &path, u).unwrap();
        assert!(t <= prev);
        prev = t;
    }
}

#[test]
fn boundary_hits_follow_the_deterministic_schedule() {
    let m = fixtures::cycle1d_a0();
    let s = ControlStrategy::constant(Action(0));
    let tr = sample_trajectory(&m, 0.5, &s, 100.0, 0).unwrap();
    assert_eq!(tr.pstar, 200);
    let tr = sample_trajectory(&m, 0.3, &s, 10.0, 0).unwrap();
    // Hits at 0.7 + 0.5 k <= 10.
    assert_eq!(tr.pstar, 19);
    for (k, e) in tr.events.iter().enumerate() {
        assert!((e.time - (0.7 + 0.5 * k as f64)).abs() < 1e-12);
        assert_eq!(e.pre, 1.0);
    }
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let m = fixtures::cycle1d();
    let s = ControlStrategy::constant(Action(1));
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_average_cost(&m, 0.5, &s, 50.0, 64, 11).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.mean.to_bits(), three.mean.to_bits());
    assert_eq!(one.stderr.to_bits(), three.stderr.to_bits());
}

#[test]
fn discounted_cost_of_the_renewal_cycle() {
    let m = fixtures::cycle1d_a0();
    let s = ControlStrategy::constant(Action(0));
    let d = (-0.5f64).exp();
    let exact = ((1.0 - d) + 0.5 * d) / (1.0 - d);
    let e = mc_discounted_cost(&m, 0.5, &s, 1.0, 1, 40.0, 0).unwrap();
    assert!((e.mean - exact).abs() < 1e-6, "{} vs {exact}", e.mean);
    // After k jumps the truncated cost is the geometric partial sum.
    let e = mc_truncated_cost(&m, 0.5, &s, 1.0, 3, 1, 0).unwrap();
    let cycle = (1.0 - d) + 0.5 * d;
    assert!((e.mean - cycle * (1.0 + d + d * d)).abs() < 1e-9);
}

#[test]
fn decay_average_cost_by_simulation() {
    let m = fixtures::decay1d();
    let s = ControlStrategy::constant(Action(0));
    let e = mc_average_cost(&m, 0.5, &s, 400.0, 100, 3).unwrap();
    assert!((e.mean - 0.25).abs() < 4.0 * e.stderr + 2e-3, "{e:?}");
}

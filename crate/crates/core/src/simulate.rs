//! Trajectory sampling and Monte Carlo cost estimates.
//!
//! Jump times are drawn by inverting the cumulative hazard: with
//! `E = -ln U`, the first jump is spontaneous at `Lambda^{-1}(E)` when
//! `Lambda(t*) >= E` and forced at `t*` otherwise. Replication `i` of a run
//! with seed `s` uses stream `i` of `ChaCha8Rng::seed_from_u64(s)`, so each
//! replication is a pure function of `(s, i)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::discounted::FeedbackPolicy;
use crate::error::{Error, Result};
use crate::flow::{
    check_interior, exit_boundary, flow_point, hit_time, time_to_reach, ControlPath, HitTime,
    PathStep, PathStepper,
};
use crate::model::{Action, ModelSpec};

/// Time tolerance of the hazard inversion.
pub const JUMP_TIME_TOL: f64 = 1e-10;

/// How actions are chosen along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlStrategy {
    /// Nearest-node lookup of a feedback policy along the flow.
    Feedback(FeedbackPolicy),
    /// Path `n` is used after the `n`-th jump; the last path repeats.
    OpenLoop(Vec<ControlPath>),
}

impl ControlStrategy {
    pub fn constant(a: Action) -> ControlStrategy {
        ControlStrategy::OpenLoop(vec![ControlPath::constant(a)])
    }

    /// The control path followed from `x` after `n` jumps.
    pub fn path_from(&self, m: &ModelSpec, n: usize, x: f64) -> Result<ControlPath> {
        match self {
            ControlStrategy::OpenLoop(paths) => paths
                .get(n.min(paths.len().saturating_sub(1)))
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("empty open-loop strategy".into())),
            ControlStrategy::Feedback(p) => feedback_path(m, p, x),
        }
    }
}

/// The feedback path from `x`: the action switches where the flow crosses
/// the midpoint between two nodes with different actions.
fn feedback_path(m: &ModelSpec, policy: &FeedbackPolicy, x: f64) -> Result<ControlPath> {
    let nodes = policy.grid.nodes();
    let i0 = policy.grid.nearest(x);
    let mut breakpoints = vec![0.0];
    let mut actions = vec![policy.interior[i0]];
    let v = m.flow.velocity(x);
    let hit = hit_time(m, x);
    let mut push = |t: f64, a: Action, actions: &mut Vec<Action>| {
        if t <= 0.0 {
            actions[0] = a;
            return;
        }
        breakpoints.push(t);
        actions.push(a);
    };
    if v > 0.0 {
        for j in i0..nodes.len().saturating_sub(1) {
            let (a, b) = (policy.interior[j], policy.interior[j + 1]);
            if a == b {
                continue;
            }
            let mid = 0.5 * (nodes[j] + nodes[j + 1]);
            if mid < x {
                continue;
            }
            // Ties go to the lower node, so the upper action starts just past `mid`.
            match time_to_reach(m, x, mid) {
                Some(t) if t < hit.value() => push(t.max(f64::MIN_POSITIVE), b, &mut actions),
                _ => break,
            }
        }
    } else if v < 0.0 {
        for j in (1..=i0).rev() {
            let (a, b) = (policy.interior[j], policy.interior[j - 1]);
            if a == b {
                continue;
            }
            let mid = 0.5 * (nodes[j - 1] + nodes[j]);
            if mid > x {
                continue;
            }
            match time_to_reach(m, x, mid) {
                Some(t) if t < hit.value() => push(t, b, &mut actions),
                _ => break,
            }
        }
    }
    let boundary_action = match hit {
        HitTime::Finite(_) => {
            let z = exit_boundary(m, x);
            policy.boundary_action(z).ok_or_else(|| {
                Error::InvalidArgument(format!("policy has no action for boundary point {z}"))
            })?
        }
        HitTime::Infinite { .. } => *actions.last().expect("non-empty"),
    };
    ControlPath::new(breakpoints, actions, boundary_action)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpCause {
    Spontaneous,
    Boundary,
}

/// One jump: time, post-jump location and cause.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    /// Location just before the jump.
    pub pre: f64,
    /// Post-jump location `Z_n`.
    pub post: f64,
    pub cause: JumpCause,
}

/// A sampled trajectory and its accumulated costs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySample {
    pub events: Vec<JumpEvent>,
    pub running_cost: f64,
    pub boundary_cost: f64,
    /// Running plus boundary cost discounted at the run's rate.
    pub discounted_cost: f64,
    /// Number of boundary hits.
    pub pstar: usize,
    /// The jump budget was exhausted.
    pub truncated: bool,
    /// State at `end_time`.
    pub final_state: f64,
    pub end_time: f64,
}

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_rep: usize,
    pub seed: u64,
    pub horizon: f64,
}

enum Outcome {
    Jump { tau: f64, cause: JumpCause, pre: f64, action: Action },
    Censored { end: f64, state: f64 },
}

/// Costs and outcome of one inter-jump segment.
struct Segment {
    outcome: Outcome,
    running: f64,
    discounted: f64,
}

/// Simpson integral of `f` and of `e^{-alpha (offset + t)} f` over the part
/// `[t0, t0 + s h]` of a step.
fn step_costs(
    m: &ModelSpec,
    x0: f64,
    step: &PathStep,
    s: f64,
    alpha: f64,
    offset: f64,
) -> (f64, f64) {
    let spec = &m.actions[step.action.0];
    let (xs, len) = if s >= 1.0 {
        (step.x, step.h)
    } else {
        let len = s * step.h;
        let at = |dt: f64| {
            if m.flow.is_closed_form() {
                flow_point(m, x0, step.t0 + dt)
            } else {
                flow_point(m, step.x[0], dt)
            }
        };
        ([step.x[0], at(0.5 * len), at(len)], len)
    };
    let f: [f64; 3] = std::array::from_fn(|i| spec.running_cost.eval(xs[i]));
    let w = len / 6.0;
    let plain = w * (f[0] + 4.0 * f[1] + f[2]);
    if alpha == 0.0 {
        return (plain, plain);
    }
    let t = [step.t0, step.t0 + 0.5 * len, step.t0 + len];
    let d: [f64; 3] = std::array::from_fn(|i| (-alpha * (offset + t[i])).exp());
    (plain, w * (d[0] * f[0] + 4.0 * d[1] * f[1] + d[2] * f[2]))
}

/// Runs the flow from `x` under `path` until the hazard reaches `e`, the
/// boundary, or `limit`.
fn next_jump(
    m: &ModelSpec,
    x: f64,
    path: &ControlPath,
    e: f64,
    limit: f64,
    alpha: f64,
    offset: f64,
) -> Result<Segment> {
    let hit = hit_time(m, x);
    let t_star = hit.value();
    let (stop, snap) = if t_star <= limit {
        (t_star, Some(exit_boundary(m, x)))
    } else {
        (limit, None)
    };
    let cap = if stop.is_finite() { None } else { Some(m.params.t_cert) };
    let mut stepper = PathStepper::new(m, x, path, stop, snap);
    let (mut running, mut discounted) = (0.0, 0.0);
    let mut last: Option<PathStep> = None;
    while let Some(step) = stepper.next_step() {
        let step = step?;
        if step.hazard_end() >= e {
            // Bisection on the monotone hazard inside the step.
            let (mut lo, mut hi) = (0.0, 1.0);
            while (hi - lo) * step.h > JUMP_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                if step.hazard_at(mid) >= e {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let (r, d) = step_costs(m, x, &step, hi, alpha, offset);
            let tau = step.t0 + hi * step.h;
            let pre = if m.flow.is_closed_form() {
                flow_point(m, x, tau)
            } else {
                flow_point(m, step.x[0], hi * step.h)
            };
            return Ok(Segment {
                outcome: Outcome::Jump {
                    tau,
                    cause: JumpCause::Spontaneous,
                    pre,
                    action: step.action,
                },
                running: running + r,
                discounted: discounted + d,
            });
        }
        let (r, d) = step_costs(m, x, &step, 1.0, alpha, offset);
        running += r;
        discounted += d;
        if let Some(cap) = cap {
            if step.t0 + step.h > cap {
                return Err(Error::Divergent {
                    horizon: cap,
                    factor: (-step.hazard_end()).exp(),
                });
            }
        }
        last = Some(step);
    }
    let outcome = match snap {
        Some(z) => Outcome::Jump {
            tau: t_star,
            cause: JumpCause::Boundary,
            pre: z,
            action: path.boundary_action(),
        },
        None => Outcome::Censored {
            end: limit,
            state: last.map_or(x, |s| s.x[2]),
        },
    };
    Ok(Segment {
        outcome,
        running,
        discounted,
    })
}

fn exp_threshold(rng: &mut impl Rng) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

/// First jump from `x` given the uniform draw `u`.
pub fn jump_time_from_uniform(
    m: &ModelSpec,
    x: f64,
    path: &ControlPath,
    u: f64,
) -> Result<(f64, JumpCause)> {
    check_interior(m, x)?;
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::InvalidArgument(format!("uniform draw {u} not in (0, 1]")));
    }
    match next_jump(m, x, path, -u.ln(), f64::INFINITY, 0.0, 0.0)?.outcome {
        Outcome::Jump { tau, cause, .. } => Ok((tau, cause)),
        Outcome::Censored { .. } => unreachable!("unbounded search never censors"),
    }
}

/// First jump time and cause from `x` under the strategy's initial path.
pub fn sample_jump_time(
    m: &ModelSpec,
    x: f64,
    strategy: &ControlStrategy,
    rng: &mut impl Rng,
) -> Result<(f64, JumpCause)> {
    let path = strategy.path_from(m, 0, x)?;
    let u = 1.0 - rng.random::<f64>();
    jump_time_from_uniform(m, x, &path, u)
}

/// When a trajectory stops.
#[derive(Clone, Copy, Debug)]
struct Stop {
    horizon: f64,
    jumps: Option<usize>,
}

fn simulate(
    m: &ModelSpec,
    x0: f64,
    strategy: &ControlStrategy,
    stop: Stop,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrajectorySample> {
    check_interior(m, x0)?;
    let mut sample = TrajectorySample {
        events: Vec::new(),
        running_cost: 0.0,
        boundary_cost: 0.0,
        discounted_cost: 0.0,
        pstar: 0,
        truncated: false,
        final_state: x0,
        end_time: 0.0,
    };
    let (mut t, mut x) = (0.0f64, x0);
    loop {
        let n = sample.events.len();
        if stop.jumps.is_some_and(|k| n >= k) {
            break;
        }
        if n >= m.params.max_jumps {
            sample.truncated = true;
            break;
        }
        let path = strategy.path_from(m, n, x)?;
        let e = exp_threshold(rng);
        let seg = next_jump(m, x, &path, e, stop.horizon - t, alpha, t)?;
        sample.running_cost += seg.running;
        sample.discounted_cost += seg.discounted;
        match seg.outcome {
            Outcome::Censored { end, state } => {
                t += end;
                x = state;
                break;
            }
            Outcome::Jump {
                tau,
                cause,
                pre,
                action,
            } => {
                t += tau;
                if cause == JumpCause::Boundary {
                    let r = m.eval_boundary_cost(pre, action)?;
                    sample.boundary_cost += r;
                    sample.discounted_cost += (-alpha * t).exp() * r;
                    sample.pstar += 1;
                }
                let u = rng.random::<f64>();
                let atoms = m.kernel(pre, action)?;
                let mut acc = 0.0;
                let mut post = atoms.last().expect("kernels have atoms").target;
                for atom in &atoms {
                    acc += atom.weight;
                    if u < acc {
                        post = atom.target;
                        break;
                    }
                }
                sample.events.push(JumpEvent {
                    time: t,
                    pre,
                    post,
                    cause,
                });
                x = post;
                if t >= stop.horizon {
                    break;
                }
            }
        }
    }
    sample.final_state = x;
    sample.end_time = t;
    Ok(sample)
}

fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// One trajectory up to `horizon`; an event exactly at the horizon is kept.
pub fn sample_trajectory(
    m: &ModelSpec,
    x0: f64,
    strategy: &ControlStrategy,
    horizon: f64,
    seed: u64,
) -> Result<TrajectorySample> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
    }
    let stop = Stop {
        horizon,
        jumps: None,
    };
    simulate(m, x0, strategy, stop, 0.0, &mut replication_rng(seed, 0))
}

/// Sum with a fixed binary tree, so the result depends only on the order
/// of `v`.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

fn estimate(values: &[f64], seed: u64, horizon: f64) -> McEstimate {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let stderr = if n > 1 {
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        (pairwise_sum(&sq) / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    McEstimate {
        mean,
        stderr,
        n_rep: n,
        seed,
        horizon,
    }
}

/// Runs `n_rep` replications in parallel and maps each to a number.
fn replicate(
    m: &ModelSpec,
    x0: f64,
    strategy: &ControlStrategy,
    stop: Stop,
    alpha: f64,
    n_rep: usize,
    seed: u64,
    value: impl Fn(&TrajectorySample) -> f64 + Sync,
) -> Result<Vec<f64>> {
    if n_rep == 0 {
        return Err(Error::InvalidArgument("at least one replication required".into()));
    }
    (0..n_rep)
        .into_par_iter()
        .map(|rep| {
            let s = simulate(m, x0, strategy, stop, alpha, &mut replication_rng(seed, rep))?;
            if s.truncated {
                return Err(Error::Explosion {
                    limit: m.params.max_jumps,
                    time: s.end_time,
                });
            }
            Ok(value(&s))
        })
        .collect()
}

/// Mean discounted running plus boundary cost up to `horizon`.
pub fn mc_discounted_cost(
    m: &ModelSpec,
    x0: f64,
    strategy: &ControlStrategy,
    alpha: f64,
    n_rep: usize,
    horizon: f64,
    seed: u64,
) -> Result<McEstimate> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("discount rate {alpha} must be positive")));
    }
    let stop = Stop {
        horizon,
        jumps: None,
    };
    let v = replicate(m, x0, strategy, stop, alpha, n_rep, seed, |s| s.discounted_cost)?;
    Ok(estimate(&v, seed, horizon))
}

/// Mean of `(running + boundary cost) / horizon`.
pub fn mc_average_cost(
    m: &ModelSpec,
    x0: f64,
    strategy: &ControlStrategy,
    horizon: f64,
    n_rep: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
    }
    let stop = Stop {
        horizon,
        jumps: None,
    };
    let v = replicate(m, x0, strategy, stop, 0.0, n_rep, seed, |s| {
        (s.running_cost + s.boundary_cost) / horizon
    })?;
    Ok(estimate(&v, seed, horizon))
}

/// Discounted cost accumulated up to the `m_jumps`-th jump. Trajectories
/// are cut where `e^{-alpha t}` falls below `eps_tail`, and no earlier than
/// `t_cert`.
pub fn mc_truncated_cost(
    m: &ModelSpec,
    x0: f64,
    strategy: &ControlStrategy,
    alpha: f64,
    m_jumps: usize,
    n_rep: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("discount rate {alpha} must be positive")));
    }
    let horizon = (-m.params.eps_tail.ln() / alpha).max(m.params.t_cert);
    if m_jumps == 0 {
        return Ok(estimate(&vec![0.0; n_rep.max(1)], seed, horizon));
    }
    let stop = Stop {
        horizon,
        jumps: Some(m_jumps),
    };
    let v = replicate(m, x0, strategy, stop, alpha, n_rep, seed, |s| s.discounted_cost)?;
    Ok(estimate(&v, seed, horizon))
}

/// `E[g(t, X(t))] / t` per horizon, from independent replications.
pub(crate) fn observable_over_time(
    m: &ModelSpec,
    x0: f64,
    strategy: &ControlStrategy,
    g: impl Fn(f64, f64) -> f64 + Sync,
    horizons: &[f64],
    n_rep: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    horizons
        .iter()
        .map(|&t| {
            let stop = Stop {
                horizon: t,
                jumps: None,
            };
            let v = replicate(m, x0, strategy, stop, 0.0, n_rep, seed, |s| {
                g(t, s.final_state) / t
            })?;
            Ok(estimate(&v, seed, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::Grid;

    #[test]
    fn jump_time_examples() {
        let m = fixtures::cycle1d();
        let a0 = ControlPath::constant(Action(0));
        assert_eq!(
            jump_time_from_uniform(&m, 0.3, &a0, 0.123).unwrap(),
            (0.7, JumpCause::Boundary)
        );
        let a1 = ControlPath::constant(Action(1));
        let (t, c) = jump_time_from_uniform(&m, 0.3, &a1, (-0.2f64).exp()).unwrap();
        assert_eq!(c, JumpCause::Spontaneous);
        assert!((t - 0.2).abs() <= 1e-10);
        let (t, c) = jump_time_from_uniform(&m, 0.3, &a1, (-0.9f64).exp()).unwrap();
        assert_eq!(c, JumpCause::Boundary);
        assert!((t - 0.7).abs() < 1e-15);
    }

    #[test]
    fn deterministic_cycle() {
        let m = fixtures::cycle1d_a0();
        let s = ControlStrategy::constant(Action(0));
        let tr = sample_trajectory(&m, 0.5, &s, 2.0, 1).unwrap();
        let times: Vec<f64> = tr.events.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![0.5, 1.0, 1.5, 2.0]);
        assert!(tr.events.iter().all(|e| e.cause == JumpCause::Boundary && e.post == 0.5));
        assert_eq!(tr.pstar, 4);
        let tr = sample_trajectory(&m, 0.5, &s, 0.3, 1).unwrap();
        assert!(tr.events.is_empty());
        assert!((tr.running_cost - 0.3).abs() < 1e-14);
        assert!((tr.final_state - 0.8).abs() < 1e-14);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let m = fixtures::cycle1d();
        let s = ControlStrategy::constant(Action(1));
        let a = sample_trajectory(&m, 0.2, &s, 20.0, 99).unwrap();
        let b = sample_trajectory(&m, 0.2, &s, 20.0, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_trajectory(&m, 0.2, &s, 20.0, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn average_and_truncated_closed_forms() {
        let m = fixtures::cycle1d_a0();
        let s = ControlStrategy::constant(Action(0));
        let e = mc_average_cost(&m, 0.5, &s, 100.0, 4, 3).unwrap();
        assert!((e.mean - 2.0).abs() < 1e-12);
        assert_eq!(e.stderr, 0.0);
        let e = mc_truncated_cost(&m, 0.5, &s, 1.0, 0, 4, 3).unwrap();
        assert_eq!(e.mean, 0.0);
        let e = mc_truncated_cost(&m, 0.5, &s, 1.0, 1, 4, 3).unwrap();
        let exact = 1.0 - (-0.5f64).exp() + 0.5 * (-0.5f64).exp();
        assert!((e.mean - exact).abs() < 1e-12, "{}", e.mean);
    }

    #[test]
    fn feedback_path_switches_at_midpoints() {
        let m = fixtures::cycle1d();
        let g = Grid::uniform(&m.domain, 9).unwrap();
        let mut interior = vec![Action(0); 9];
        for a in interior.iter_mut().skip(5) {
            *a = Action(1);
        }
        let p = FeedbackPolicy::new(g, interior, vec![(1.0, Action(0))]).unwrap();
        let path = feedback_path(&m, &p, 0.12).unwrap();
        assert_eq!(path.actions(), &[Action(0), Action(1)]);
        assert!((path.breakpoints()[1] - (0.55 - 0.12)).abs() < 1e-15);
        assert_eq!(path.boundary_action(), Action(0));
    }

    #[test]
    fn pairwise_sum_is_exact_on_small_integers() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
    }
}

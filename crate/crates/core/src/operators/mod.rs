//! Embedded-chain operators along flow lines and the one-stage Bellman
//! operator.
//!
//! For a start point `x` and a [`ControlPath`], with survival factor
//! `S(t) = exp(-alpha t - Lambda(t))`:
//!
//! * sojourn: `int_0^t* S(t) dt`
//! * running cost: `int_0^t* S(t) f(phi(x, t), a(t)) dt`
//! * boundary cost: `S(t*) r(phi(x, t*), a_boundary)`, zero when `t* = inf`
//! * continuation: `int_0^t* S(t) lambda Qh dt + S(t*) Qh(phi(x, t*), a_boundary)`
//!
//! Integrals use Simpson's rule on steps of at most `delta_quad` that
//! respect path breakpoints. Infinite horizons are truncated where
//! `S <= eps_tail`; the truncated mass is reported as `tail`.

mod plan;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{check_interior, exit_boundary, hit_time, ControlPath, HitTime, PathStepper};
use crate::grid::ValueField;
use crate::model::{Action, ModelSpec};

pub use plan::{apply_bellman, one_stage_value, BellmanPlan, OneStageOutput};

/// Accuracy of the along-path quadrature at the default step.
pub const QUAD_TOL: f64 = 1e-9;

/// Weight vectors must sum to one within this tolerance.
pub const RELAXED_MASS_TOL: f64 = 1e-12;

/// Where the along-path integrals stop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum End {
    /// At `t*`, or at the tail truncation time when `t*` is infinite.
    Auto,
    /// At the given time, without boundary terms.
    Fixed(f64),
}

/// All four along-path functionals for one path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathFunctionals {
    pub sojourn: f64,
    pub running_cost: f64,
    pub boundary_cost: f64,
    /// Present when a value field was supplied.
    pub continuation: Option<f64>,
    /// Survival factor where integration stopped; zero at a finite `t*`.
    pub tail: f64,
    /// Time where integration stopped.
    pub horizon: f64,
    pub hit: HitTime,
}

/// `Qh(x, a) = sum_i w_i h(z_i)`.
pub fn qh(m: &ModelSpec, x: f64, a: Action, h: &ValueField) -> Result<f64> {
    let mut s = 0.0;
    for atom in m.kernel(x, a)? {
        s += atom.weight * h.eval(atom.target)?;
    }
    Ok(s)
}

fn qh_unchecked(m: &ModelSpec, x: f64, a: Action, h: &ValueField) -> Result<f64> {
    let mut s = 0.0;
    for atom in m.actions[a.0].kernel.atoms(x) {
        s += atom.weight * h.eval(atom.target)?;
    }
    Ok(s)
}

pub fn path_functionals(
    m: &ModelSpec,
    x: f64,
    path: &ControlPath,
    alpha: f64,
    h: Option<&ValueField>,
) -> Result<PathFunctionals> {
    path_functionals_to(m, x, path, alpha, h, End::Auto)
}

pub(crate) fn path_functionals_to(
    m: &ModelSpec,
    x: f64,
    path: &ControlPath,
    alpha: f64,
    h: Option<&ValueField>,
    end: End,
) -> Result<PathFunctionals> {
    check_interior(m, x)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("discount rate {alpha} must be >= 0")));
    }
    let hit = hit_time(m, x);
    let (stop, snap) = match (end, hit) {
        (End::Fixed(t), HitTime::Finite(ts)) if t > ts => {
            return Err(Error::BeyondHitTime { x, t, t_star: ts })
        }
        (End::Fixed(t), _) => (t, None),
        (End::Auto, HitTime::Finite(ts)) => (ts, Some(exit_boundary(m, x))),
        (End::Auto, HitTime::Infinite { .. }) => (f64::INFINITY, None),
    };
    let eps = m.params.eps_tail;
    let t_cert = m.params.t_cert;

    let mut stepper = PathStepper::new(m, x, path, stop, snap);
    let (mut sojourn, mut running, mut cont) = (0.0, 0.0, 0.0);
    let mut s_end = 1.0;
    let mut t_end = 0.0;
    while let Some(step) = stepper.next_step() {
        let step = step?;
        let ts = step.times();
        let haz = [step.hazard0, step.hazard_mid(), step.hazard_end()];
        let s: [f64; 3] = std::array::from_fn(|i| (-(alpha * ts[i] + haz[i])).exp());
        let w = step.h / 6.0;
        sojourn += w * (s[0] + 4.0 * s[1] + s[2]);
        let spec = &m.actions[step.action.0];
        let f: [f64; 3] = std::array::from_fn(|i| spec.running_cost.eval(step.x[i]));
        running += w * (s[0] * f[0] + 4.0 * s[1] * f[1] + s[2] * f[2]);
        if let Some(h) = h {
            let mut g = [0.0; 3];
            for i in 0..3 {
                if step.rate[i] != 0.0 {
                    g[i] = step.rate[i] * qh_unchecked(m, step.x[i], step.action, h)?;
                }
            }
            cont += w * (s[0] * g[0] + 4.0 * s[1] * g[1] + s[2] * g[2]);
        }
        s_end = s[2];
        t_end = ts[2];
        if stop.is_infinite() && s_end <= eps {
            break;
        }
        if stop.is_infinite() && t_end > t_cert {
            return Err(Error::Divergent {
                horizon: t_cert,
                factor: s_end,
            });
        }
    }

    let (mut boundary, mut tail) = (0.0, s_end);
    if let Some(z) = snap {
        let a = path.boundary_action();
        boundary = s_end * m.eval_boundary_cost(z, a)?;
        if let Some(h) = h {
            cont += s_end * qh(m, z, a, h)?;
        }
        tail = 0.0;
    }
    Ok(PathFunctionals {
        sojourn,
        running_cost: running,
        boundary_cost: boundary,
        continuation: h.map(|_| cont),
        tail,
        horizon: if snap.is_some() { stop } else { t_end },
        hit,
    })
}

/// `int_0^t* exp(-alpha t - Lambda(t)) dt`.
pub fn discounted_sojourn(m: &ModelSpec, x: f64, path: &ControlPath, alpha: f64) -> Result<f64> {
    Ok(path_functionals(m, x, path, alpha, None)?.sojourn)
}

/// Discounted running cost up to the first jump.
pub fn discounted_running_cost(
    m: &ModelSpec,
    x: f64,
    path: &ControlPath,
    alpha: f64,
) -> Result<f64> {
    Ok(path_functionals(m, x, path, alpha, None)?.running_cost)
}

/// Discounted boundary cost paid if the first jump is forced.
pub fn discounted_boundary_cost(
    m: &ModelSpec,
    x: f64,
    path: &ControlPath,
    alpha: f64,
) -> Result<f64> {
    Ok(path_functionals(m, x, path, alpha, None)?.boundary_cost)
}

/// Discounted expectation of `h` at the first post-jump location.
pub fn discounted_continuation(
    m: &ModelSpec,
    x: f64,
    path: &ControlPath,
    alpha: f64,
    h: &ValueField,
) -> Result<f64> {
    Ok(path_functionals(m, x, path, alpha, Some(h))?
        .continuation
        .expect("value field supplied"))
}

/// Minimizer of `f(x, a) - lambda(x, a) (w_x - Qh(x, a))` over feasible
/// actions; ties go to the lowest index.
pub fn hamiltonian_argmin(
    m: &ModelSpec,
    x: f64,
    w_x: f64,
    h: &ValueField,
) -> Result<(Action, f64)> {
    let mut best: Option<(Action, f64)> = None;
    for a in m.feasible_actions(x)? {
        let v = m.eval_running_cost(x, a)? - m.eval_rate(x, a)? * (w_x - qh(m, x, a, h)?);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "hamiltonian",
                x,
            });
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((a, v));
        }
    }
    Ok(best.expect("feasible set is non-empty"))
}

/// Minimizer of `r(z, a) + Qh(z, a)`; ties go to the lowest index.
pub fn boundary_argmin(m: &ModelSpec, z: f64, h: &ValueField) -> Result<(Action, f64)> {
    let mut best: Option<(Action, f64)> = None;
    for a in m.feasible_actions(z)? {
        let v = m.eval_boundary_cost(z, a)? + qh(m, z, a, h)?;
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((a, v));
        }
    }
    Ok(best.expect("feasible set is non-empty"))
}

/// A probability vector over the feasible actions at a state, in
/// ascending action order.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedDistribution {
    weights: Vec<f64>,
}

impl RelaxedDistribution {
    pub fn new(weights: Vec<f64>) -> Result<RelaxedDistribution> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty()
            || weights.iter().any(|w| !(*w >= 0.0))
            || (sum - 1.0).abs() > RELAXED_MASS_TOL
        {
            return Err(Error::InvalidArgument(format!(
                "relaxed weights must be nonnegative and sum to 1 (sum {sum})"
            )));
        }
        Ok(RelaxedDistribution { weights })
    }

    pub fn vertex(n: usize, i: usize) -> RelaxedDistribution {
        let mut weights = vec![0.0; n];
        weights[i] = 1.0;
        RelaxedDistribution { weights }
    }

    /// Uniform on the simplex.
    pub fn sample(n: usize, rng: &mut impl Rng) -> RelaxedDistribution {
        let e: Vec<f64> = (0..n)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let s: f64 = e.iter().sum();
        RelaxedDistribution {
            weights: e.iter().map(|v| v / s).collect(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Hamiltonian averaged over a relaxed distribution.
pub fn hamiltonian_mixture(
    m: &ModelSpec,
    x: f64,
    w_x: f64,
    h: &ValueField,
    mu: &RelaxedDistribution,
) -> Result<f64> {
    let acts = m.feasible_actions(x)?;
    if acts.len() != mu.weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} feasible actions",
            mu.weights.len(),
            acts.len()
        )));
    }
    let mut s = 0.0;
    for (a, w) in acts.iter().zip(&mu.weights) {
        let v = m.eval_running_cost(x, *a)? - m.eval_rate(x, *a)? * (w_x - qh(m, x, *a, h)?);
        s += w * v;
    }
    Ok(s)
}

/// Result of comparing relaxed and ordinary Hamiltonian minima.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxedGap {
    /// `min over samples of H(mu) - min over actions of H(a)`.
    pub min_gap: f64,
    /// Gap of the point mass at the minimizing action.
    pub vertex_gap: f64,
}

/// Samples `n_samples` relaxed distributions at `x` and compares their
/// Hamiltonian with the ordinary minimum, using `w_x` from the one-stage
/// value at `x`.
pub fn relaxed_one_stage_check(
    m: &ModelSpec,
    x: f64,
    alpha: f64,
    rho: f64,
    h: &ValueField,
    n_samples: usize,
    seed: u64,
) -> Result<RelaxedGap> {
    let w_x = one_stage_value(m, x, alpha, rho, h)?.value;
    let (best, vmin) = hamiltonian_argmin(m, x, w_x, h)?;
    let acts = m.feasible_actions(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_gap = f64::INFINITY;
    for _ in 0..n_samples {
        let mu = RelaxedDistribution::sample(acts.len(), &mut rng);
        min_gap = min_gap.min(hamiltonian_mixture(m, x, w_x, h, &mu)? - vmin);
    }
    let pos = acts.iter().position(|a| *a == best).expect("argmin is feasible");
    let vertex = RelaxedDistribution::vertex(acts.len(), pos);
    let vertex_gap = hamiltonian_mixture(m, x, w_x, h, &vertex)? - vmin;
    Ok(RelaxedGap {
        min_gap,
        vertex_gap,
    })
}

/// Residuals of splitting each functional at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitResiduals {
    pub sojourn: f64,
    pub running_cost: f64,
    pub boundary_cost: f64,
    pub continuation: f64,
}

impl SplitResiduals {
    pub fn max(&self) -> f64 {
        self.sojourn
            .max(self.running_cost)
            .max(self.boundary_cost)
            .max(self.continuation)
    }
}

/// Compares each functional at `x` with its value split at `0 < t < t*`:
/// the integral over `[0, t]` plus `S(t)` times the functional at
/// `phi(x, t)` under the shifted path.
pub fn decompose_check(
    m: &ModelSpec,
    x: f64,
    path: &ControlPath,
    t: f64,
    alpha: f64,
    h: &ValueField,
) -> Result<SplitResiduals> {
    let hit = hit_time(m, x);
    if !(t > 0.0 && t < hit.value()) {
        return Err(Error::InvalidArgument(format!("split time {t} not in (0, t*)")));
    }
    let whole = path_functionals(m, x, path, alpha, Some(h))?;
    let head = path_functionals_to(m, x, &path.truncated(t), alpha, Some(h), End::Fixed(t))?;
    let y = crate::flow::flow_point(m, x, t);
    let rest_end = if hit.is_finite() {
        End::Auto
    } else {
        End::Fixed(whole.horizon - t)
    };
    let rest = path_functionals_to(m, y, &path.shifted(t), alpha, Some(h), rest_end)?;
    let s = head.tail;
    let c = |v: Option<f64>| v.expect("value field supplied");
    Ok(SplitResiduals {
        sojourn: (whole.sojourn - head.sojourn - s * rest.sojourn).abs(),
        running_cost: (whole.running_cost - head.running_cost - s * rest.running_cost).abs(),
        boundary_cost: (whole.boundary_cost - head.boundary_cost - s * rest.boundary_cost).abs(),
        continuation: (c(whole.continuation) - c(head.continuation) - s * c(rest.continuation))
            .abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::Grid;

    fn grid(m: &ModelSpec, n: usize) -> Grid {
        Grid::uniform(&m.domain, n).unwrap()
    }

    #[test]
    fn sojourn_examples() {
        let m = fixtures::cycle1d();
        let a1 = ControlPath::constant(Action(1));
        let a0 = ControlPath::constant(Action(0));
        let v = discounted_sojourn(&m, 0.5, &a1, 0.0).unwrap();
        assert!((v - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
        assert!((discounted_sojourn(&m, 0.5, &a0, 0.0).unwrap() - 0.5).abs() < 1e-14);
        let d = fixtures::decay1d();
        let f = path_functionals(&d, 0.3, &a0, 0.0, None).unwrap();
        assert!((f.sojourn + f.tail - 1.0).abs() < 1e-10);
        assert!(f.tail <= d.params.eps_tail);
    }

    #[test]
    fn functional_examples_at_midpoint() {
        let m = fixtures::cycle1d();
        let g = grid(&m, 201);
        let a0 = ControlPath::constant(Action(0));
        let c = ValueField::constant(&g, 3.0);
        let f = path_functionals(&m, 0.5, &a0, 0.0, Some(&c)).unwrap();
        assert!((f.running_cost - 0.5).abs() < 1e-14);
        assert!((f.boundary_cost - 0.5).abs() < 1e-14);
        assert!((f.continuation.unwrap() - 3.0).abs() < 1e-14);

        let a1 = ControlPath::constant(Action(1));
        let zero = ValueField::constant(&g, 0.0);
        let f = path_functionals(&m, 0.5, &a1, 0.0, Some(&zero)).unwrap();
        assert_eq!(f.continuation, Some(0.0));
        assert!((f.boundary_cost - 0.5 * (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn decay_continuation_matches_constant_rate_closed_form() {
        let m = fixtures::decay1d();
        let g = grid(&m, 51);
        let one = ValueField::constant(&g, 1.0);
        let f = path_functionals(&m, 0.5, &ControlPath::constant(Action(0)), 0.1, Some(&one))
            .unwrap();
        let exact = (1.0 - (-1.1 * f.horizon).exp()) / 1.1;
        assert!((f.continuation.unwrap() - exact).abs() < 1e-10);
        assert!((f.continuation.unwrap() - 1.0 / 1.1).abs() <= m.params.eps_tail);
    }

    #[test]
    fn divergent_without_discount_or_jumps() {
        let text = fixtures::DECAY1D.replace(
            "rate = { family = \"constant\", value = 1.0 }",
            "rate = { family = \"constant\", value = 0.0 }",
        );
        let m = ModelSpec::load(&text).unwrap();
        let r = discounted_sojourn(&m, 0.5, &ControlPath::constant(Action(0)), 0.0);
        assert!(matches!(r, Err(Error::Divergent { .. })));
    }

    #[test]
    fn hamiltonian_examples() {
        let m = fixtures::cycle1d();
        let g = grid(&m, 201);
        let zero = ValueField::constant(&g, 0.0);
        assert_eq!(hamiltonian_argmin(&m, 0.3, 0.0, &zero).unwrap(), (Action(1), 0.8));
        assert_eq!(hamiltonian_argmin(&m, 0.3, -0.5, &zero).unwrap(), (Action(0), 1.0));
        // Equal objectives: f1 - (w - Qh) = 1 when w - Qh = -0.2.
        let (a, v) = hamiltonian_argmin(&m, 0.3, -0.2, &zero).unwrap();
        assert_eq!(a, Action(0));
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_examples() {
        let m = fixtures::cycle1d();
        let g = grid(&m, 201);
        assert_eq!(
            boundary_argmin(&m, 1.0, &ValueField::constant(&g, 0.0)).unwrap(),
            (Action(0), 0.5)
        );
        assert_eq!(
            boundary_argmin(&m, 1.0, &ValueField::constant(&g, 2.0)).unwrap(),
            (Action(0), 2.5)
        );
        let text = fixtures::CYCLE1D.replace(
            "running_cost = { family = \"constant\", value = 0.8 }",
            "running_cost = { family = \"constant\", value = 0.8 }\nboundary_cost = { family = \"constant\", value = 0.3 }",
        );
        let m = ModelSpec::load(&text).unwrap();
        let (a, v) = boundary_argmin(&m, 1.0, &ValueField::constant(&g, 1.0)).unwrap();
        assert_eq!(a, Action(1));
        assert!((v - 1.3).abs() < 1e-15);
    }

    #[test]
    fn uniform_mixture_gap() {
        let m = fixtures::cycle1d();
        let g = grid(&m, 201);
        let zero = ValueField::constant(&g, 0.0);
        let mu = RelaxedDistribution::new(vec![0.5, 0.5]).unwrap();
        let v = hamiltonian_mixture(&m, 0.3, 0.0, &zero, &mu).unwrap();
        assert!((v - 0.8 - 0.1).abs() < 1e-15);
        assert!(RelaxedDistribution::new(vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn relaxed_gap_is_nonnegative() {
        let m = fixtures::cycle1d();
        let g = grid(&m, 51);
        let h = ValueField::from_fn(&g, |x| x * x);
        let gap = relaxed_one_stage_check(&m, 0.3, 0.5, 0.0, &h, 1000, 7).unwrap();
        assert!(gap.min_gap >= -1e-12);
        assert_eq!(gap.vertex_gap, 0.0);
    }

    #[test]
    fn split_residuals_are_small() {
        let m = fixtures::cycle1d();
        let g = grid(&m, 201);
        let h = ValueField::from_fn(&g, |x| 1.0 + x);
        let r = decompose_check(&m, 0.3, &ControlPath::constant(Action(1)), 0.2, 0.0, &h).unwrap();
        assert!(r.max() <= 1e-9, "{r:?}");
        let r = decompose_check(&m, 0.3, &ControlPath::constant(Action(0)), 0.2, 0.3, &h).unwrap();
        assert_eq!(r.boundary_cost, 0.0);
        let zero = ValueField::constant(&g, 0.0);
        let r = decompose_check(&m, 0.3, &ControlPath::constant(Action(1)), 0.2, 0.0, &zero).unwrap();
        assert!(r.continuation <= 1e-9);
        let d = fixtures::decay1d();
        let gd = grid(&d, 51);
        let hd = ValueField::from_fn(&gd, |x| x);
        let r = decompose_check(&d, 0.7, &ControlPath::constant(Action(0)), 0.4, 0.2, &hd).unwrap();
        assert!(r.max() <= 1e-9, "{r:?}");
    }

    #[test]
    fn normalization_identity() {
        let m = fixtures::cycle1d();
        let g = grid(&m, 51);
        let one = ValueField::constant(&g, 1.0);
        let path = ControlPath::new(vec![0.0, 0.1], vec![Action(1), Action(0)], Action(1)).unwrap();
        for alpha in [0.0, 0.3, 2.0] {
            let f = path_functionals(&m, 0.2, &path, alpha, Some(&one)).unwrap();
            let s = f.continuation.unwrap() + alpha * f.sojourn + f.tail;
            assert!((s - 1.0).abs() <= 5.0 * QUAD_TOL, "alpha {alpha}: {s}");
        }
    }
}

//! The discounted problem: value iteration from zero and the stationary
//! feedback policy.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{exit_boundary, hit_time};
use crate::grid::{Grid, ValueField};
use crate::model::{Action, ModelSpec};
use crate::operators::{boundary_argmin, hamiltonian_argmin, BellmanPlan};

/// Largest tolerated decrease between consecutive iterates.
pub const MONOTONE_TOL: f64 = 1e-10;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_GRID: usize = 201;

/// One action per grid node plus one per reachable boundary point.
/// Off-grid states use the nearest node.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackPolicy {
    pub grid: Grid,
    pub interior: Vec<Action>,
    pub boundary: Vec<(f64, Action)>,
}

impl FeedbackPolicy {
    pub fn new(grid: Grid, interior: Vec<Action>, boundary: Vec<(f64, Action)>) -> Result<Self> {
        if interior.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} actions for {} grid nodes",
                interior.len(),
                grid.len()
            )));
        }
        Ok(FeedbackPolicy {
            grid,
            interior,
            boundary,
        })
    }

    /// The same action everywhere, including both boundary points.
    pub fn constant(m: &ModelSpec, grid: &Grid, a: Action) -> FeedbackPolicy {
        FeedbackPolicy {
            grid: grid.clone(),
            interior: vec![a; grid.len()],
            boundary: vec![(m.domain.lower, a), (m.domain.upper, a)],
        }
    }

    pub fn action_at(&self, x: f64) -> Action {
        self.interior[self.grid.nearest(x)]
    }

    pub fn boundary_action(&self, z: f64) -> Option<Action> {
        self.boundary
            .iter()
            .find(|(b, _)| (b - z).abs() <= crate::model::BOUNDARY_TOL)
            .map(|(_, a)| *a)
    }

    /// Fraction of nodes where both policies agree.
    pub fn agreement(&self, other: &FeedbackPolicy) -> f64 {
        let same = self
            .interior
            .iter()
            .zip(&other.interior)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.interior.len().max(1) as f64
    }
}

/// Output of [`value_iteration`].
#[derive(Clone, Debug)]
pub struct DiscountedSolution {
    pub alpha: f64,
    pub value: ValueField,
    pub policy: FeedbackPolicy,
    pub iterations: usize,
    /// `sup |v_(m+1) - v_m|` per iteration.
    pub sup_deltas: Vec<f64>,
    /// `min (v_(m+1) - v_m)` per iteration.
    pub min_increments: Vec<f64>,
    /// `sup |W J - J|` for the returned `J`.
    pub residual: f64,
}

/// Sup-norm distances between `W J` and `J` in each direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointResidual {
    /// `sup (W J - J)`
    pub above: f64,
    /// `sup (J - W J)`
    pub below: f64,
}

/// Iterates `v_(m+1) = W v_m` from `v_0 = 0` until `sup |v_(m+1) - v_m| <= tol`,
/// returning `J = v_m` (so the fixed-point residual is the last delta).
pub fn value_iteration(
    m: &ModelSpec,
    grid: &Grid,
    alpha: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DiscountedSolution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "discount rate {alpha} must be positive"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let plan = BellmanPlan::new(m, grid, alpha)?;
    let mut v = ValueField::constant(grid, 0.0);
    let mut sup_deltas = Vec::new();
    let mut min_increments = Vec::new();
    for it in 0..max_iter {
        let next = plan.apply(0.0, &v)?;
        let (mut delta, mut min_inc) = (0.0f64, f64::INFINITY);
        for (a, b) in next.values.iter().zip(&v.values) {
            delta = delta.max((a - b).abs());
            min_inc = min_inc.min(a - b);
        }
        if min_inc < -MONOTONE_TOL {
            return Err(Error::Monotonicity {
                iteration: it + 1,
                drop: min_inc,
            });
        }
        sup_deltas.push(delta);
        min_increments.push(min_inc);
        if delta <= tol {
            let policy = extract_policy(m, grid, &v)?;
            return Ok(DiscountedSolution {
                alpha,
                value: v,
                policy,
                iterations: it,
                sup_deltas,
                min_increments,
                residual: delta,
            });
        }
        v = next;
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        delta: sup_deltas.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Boundary points reached by the flow from some grid node.
pub fn reachable_boundary(m: &ModelSpec, grid: &Grid) -> Vec<f64> {
    let mut zs: Vec<f64> = Vec::new();
    for &x in grid.nodes() {
        if hit_time(m, x).is_finite() {
            let z = exit_boundary(m, x);
            if !zs.contains(&z) {
                zs.push(z);
            }
        }
    }
    zs.sort_by(f64::total_cmp);
    zs
}

/// The feedback selector: Hamiltonian minimizer with `w(node)` and `h`
/// inside, `r + Qh` minimizer on the boundary.
pub fn feedback_policy(
    m: &ModelSpec,
    grid: &Grid,
    w: &ValueField,
    h: &ValueField,
) -> Result<FeedbackPolicy> {
    let interior = grid
        .nodes()
        .iter()
        .zip(&w.values)
        .map(|(&x, &wx)| hamiltonian_argmin(m, x, wx, h).map(|(a, _)| a))
        .collect::<Result<Vec<_>>>()?;
    let boundary = reachable_boundary(m, grid)
        .into_iter()
        .map(|z| boundary_argmin(m, z, h).map(|(a, _)| (z, a)))
        .collect::<Result<Vec<_>>>()?;
    FeedbackPolicy::new(grid.clone(), interior, boundary)
}

/// Policy of a fixed point `J`: the feedback selector with `w = h = J`.
pub fn extract_policy(m: &ModelSpec, grid: &Grid, j: &ValueField) -> Result<FeedbackPolicy> {
    feedback_policy(m, grid, j, j)
}

pub fn fixed_point_residual(
    m: &ModelSpec,
    grid: &Grid,
    alpha: f64,
    j: &ValueField,
) -> Result<FixedPointResidual> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "discount rate {alpha} must be positive"
        )));
    }
    let wj = BellmanPlan::new(m, grid, alpha)?.apply(0.0, j)?;
    let (mut above, mut below) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (a, b) in wj.values.iter().zip(&j.values) {
        above = above.max(a - b);
        below = below.max(b - a);
    }
    Ok(FixedPointResidual { above, below })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    /// `J = [(1 - e^{-a c}) / a + e^{-a c} r] / (1 - e^{-a c})` at the
    /// reset point for the single-action cycle, `c = 0.5`.
    fn renewal(alpha: f64) -> f64 {
        let d = (-0.5 * alpha).exp();
        ((1.0 - d) / alpha + 0.5 * d) / (1.0 - d)
    }

    #[test]
    fn single_action_cycle_matches_renewal() {
        let m = fixtures::cycle1d_a0();
        let g = Grid::uniform(&m.domain, 201).unwrap();
        let sol = value_iteration(&m, &g, 1.0, 1e-6, 100_000).unwrap();
        let j = sol.value.eval(0.5).unwrap();
        assert!((j - renewal(1.0)).abs() < 1e-3, "{j} vs {}", renewal(1.0));
        assert!((renewal(1.0) - 1.77074).abs() < 1e-5);
        assert!(sol.residual <= 1e-6);
        assert!(sol.policy.interior.iter().all(|a| *a == Action(0)));
        assert!(sol.min_increments.iter().all(|d| *d >= -MONOTONE_TOL));
    }

    #[test]
    fn residual_directions() {
        let m = fixtures::cycle1d();
        let g = Grid::uniform(&m.domain, 51).unwrap();
        let sol = value_iteration(&m, &g, 1.0, 1e-7, 100_000).unwrap();
        let r = fixed_point_residual(&m, &g, 1.0, &sol.value).unwrap();
        assert!(r.above <= 1e-7 && r.below <= 1e-7);
        let shifted = sol.value.map(|v| v + 0.1);
        let r = fixed_point_residual(&m, &g, 1.0, &shifted).unwrap();
        assert!(r.above <= 0.0);
        let zero = ValueField::constant(&g, 0.0);
        let r = fixed_point_residual(&m, &g, 1.0, &zero).unwrap();
        assert!(r.below <= 0.0 && r.above > 0.0);
    }

    #[test]
    fn jumping_where_it_pays() {
        let m = fixtures::cycle1d();
        let g = Grid::uniform(&m.domain, 51).unwrap();
        // Jumps land at 0.5. Cost 0.8 - (J - QJ) against 1: a1 wins at 0.1
        // where J = QJ, a0 wins at 0.6 where J - QJ = -0.3.
        let j = ValueField::from_fn(&g, |x| if x < 0.55 { 1.3 } else { 1.0 });
        let p = extract_policy(&m, &g, &j).unwrap();
        assert_eq!(p.action_at(0.1), Action(1));
        assert_eq!(p.action_at(0.6), Action(0));
    }

    #[test]
    fn zero_alpha_is_rejected() {
        let m = fixtures::cycle1d();
        let g = Grid::uniform(&m.domain, 11).unwrap();
        assert!(matches!(
            value_iteration(&m, &g, 0.0, 1e-6, 10),
            Err(Error::InvalidArgument(_))
        ));
    }
}

//! Numerical checks of the standing model assumptions on a grid.

use serde::Serialize;

use super::{ModelSpec, KERNEL_MASS_TOL};
use crate::flow::{flow_point, hit_time};
use crate::grid::Grid;

/// Offset of the extra sample points next to the boundary.
const EDGE_OFFSET: f64 = 1e-9;

/// One checked assumption.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub description: &'static str,
    pub pass: bool,
    pub measured: f64,
    pub threshold: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn failed(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Integrals along the uncontrolled flow line from one sample point.
struct LineIntegrals {
    sup_rate: f64,
    k_floor: f64,
    floor_cost: f64,
    survival_end: f64,
    infinite: bool,
}

fn line_integrals(m: &ModelSpec, x: f64, horizon: f64) -> LineIntegrals {
    let hit = hit_time(m, x);
    let end = hit.finite().map_or(horizon, |t| t.min(horizon));
    let delta = m.params.delta_quad;
    let n = (end / delta - 1e-9).ceil().max(1.0) as usize;
    let h = end / n as f64;
    let closed = m.flow.is_closed_form();

    let point = |from: f64, t_from: f64, dt: f64| {
        if closed {
            flow_point(m, x, t_from + dt)
        } else {
            flow_point(m, from, dt)
        }
    };
    let eval = |p: f64| {
        let mut max_rate = 0.0f64;
        let mut min_rate = f64::INFINITY;
        let mut max_cost = 0.0f64;
        for i in m.feasible_indices(p) {
            let a = &m.actions[i];
            max_rate = max_rate.max(a.rate.eval(p));
            min_rate = min_rate.min(a.rate.eval(p));
            max_cost = max_cost.max(a.running_cost.eval(p));
        }
        let floor = m.xi.eval(p).min(min_rate).max(0.0);
        (max_rate, floor, max_cost)
    };

    let (mut sup_rate, mut floor_int, mut k, mut c) = (0.0, 0.0, 0.0, 0.0);
    let mut cur = x;
    let mut v0 = eval(cur);
    for i in 0..n {
        let t = i as f64 * h;
        let xm = point(cur, t, 0.5 * h);
        let x1 = point(cur, t, h);
        let vm = eval(xm);
        let v1 = eval(x1);
        sup_rate += h / 6.0 * (v0.0 + 4.0 * vm.0 + v1.0);
        let f_mid = floor_int + h / 24.0 * (5.0 * v0.1 + 8.0 * vm.1 - v1.1);
        let f_end = floor_int + h / 6.0 * (v0.1 + 4.0 * vm.1 + v1.1);
        let (s0, sm, s1) = ((-floor_int).exp(), (-f_mid).exp(), (-f_end).exp());
        k += h / 6.0 * (s0 + 4.0 * sm + s1);
        c += h / 6.0 * (s0 * v0.2 + 4.0 * sm * vm.2 + s1 * v1.2);
        floor_int = f_end;
        cur = x1;
        v0 = v1;
    }
    LineIntegrals {
        sup_rate,
        k_floor: k,
        floor_cost: c,
        survival_end: (-floor_int).exp(),
        infinite: !hit.is_finite(),
    }
}

fn stationary_points(m: &ModelSpec, samples: &[f64]) -> Vec<f64> {
    use super::FlowFamily;
    let (lo, hi) = (m.domain.lower, m.domain.upper);
    let mut pts: Vec<f64> = match &m.flow {
        FlowFamily::LinearDrift { velocity } if *velocity == 0.0 => samples.to_vec(),
        FlowFamily::LinearDrift { .. } => Vec::new(),
        FlowFamily::ExponentialDecay { center, rate } if *rate != 0.0 => vec![*center],
        FlowFamily::ExponentialDecay { .. } => samples.to_vec(),
        FlowFamily::PolynomialDrift { coefficients } => {
            // Roots of c0 + c1 x + c2 x^2.
            let c = |i: usize| coefficients.get(i).copied().unwrap_or(0.0);
            let (c0, c1, c2) = (c(0), c(1), c(2));
            if c2 == 0.0 {
                if c1 == 0.0 {
                    Vec::new()
                } else {
                    vec![-c0 / c1]
                }
            } else {
                let disc = c1 * c1 - 4.0 * c2 * c0;
                if disc < 0.0 {
                    Vec::new()
                } else {
                    let s = disc.sqrt();
                    vec![(-c1 - s) / (2.0 * c2), (-c1 + s) / (2.0 * c2)]
                }
            }
        }
    };
    pts.retain(|&p| p > lo && p < hi);
    pts
}

/// Checks the standing assumptions at every grid node (plus points
/// `1e-9` inside each boundary), integrating along flow lines up to
/// `min(t*, horizon)`. Failures are reported, never raised.
pub fn validate_assumptions(m: &ModelSpec, grid: &Grid, horizon: f64) -> ValidationReport {
    let (lo, hi) = (m.domain.lower, m.domain.upper);
    let mut samples: Vec<f64> = vec![lo + EDGE_OFFSET];
    samples.extend(grid.nodes().iter().copied().filter(|&x| m.domain.contains_interior(x)));
    samples.push(hi - EDGE_OFFSET);

    let mut checks = Vec::new();
    let mut push = |id, description, pass, measured, threshold, detail: String| {
        checks.push(AssumptionCheck {
            id,
            description,
            pass,
            measured,
            threshold,
            detail,
        })
    };

    // Feasible sets.
    let min_feasible = samples
        .iter()
        .chain([lo, hi].iter())
        .map(|&x| m.feasible_indices(x).count())
        .min()
        .unwrap_or(0);
    push(
        "feasible_nonempty",
        "every sampled state has a feasible action",
        min_feasible >= 1,
        min_feasible as f64,
        Some(1.0),
        String::new(),
    );
    push(
        "action_continuity",
        "rates, costs and kernels are continuous in the action (finite action set)",
        true,
        m.action_count() as f64,
        None,
        "finite action sets carry the discrete topology".into(),
    );

    // Cost signs.
    let mut min_f = f64::INFINITY;
    let mut min_rate = f64::INFINITY;
    for &x in &samples {
        for i in m.feasible_indices(x) {
            min_f = min_f.min(m.actions[i].running_cost.eval(x));
            min_rate = min_rate.min(m.actions[i].rate.eval(x));
        }
    }
    push(
        "rate_nonnegative",
        "jump rates are nonnegative",
        min_rate >= 0.0,
        min_rate,
        Some(0.0),
        String::new(),
    );
    push(
        "running_cost_nonnegative",
        "running costs are nonnegative",
        min_f >= 0.0,
        min_f,
        Some(0.0),
        String::new(),
    );
    let mut min_r = f64::INFINITY;
    for z in [lo, hi] {
        for i in m.feasible_indices(z) {
            min_r = min_r.min(m.actions[i].boundary_cost.eval(z));
        }
    }
    push(
        "boundary_cost_nonnegative",
        "boundary costs are nonnegative",
        min_r >= 0.0,
        min_r,
        Some(0.0),
        String::new(),
    );

    // Kernels.
    let mut mass_err = 0.0f64;
    for &x in samples.iter().chain([lo, hi].iter()) {
        for i in m.feasible_indices(x) {
            let mass: f64 = m.actions[i].kernel.atoms(x).iter().map(|a| a.weight).sum();
            mass_err = mass_err.max((mass - 1.0).abs());
        }
    }
    push(
        "kernel_mass",
        "kernel atoms sum to one",
        mass_err <= KERNEL_MASS_TOL,
        mass_err,
        Some(KERNEL_MASS_TOL),
        String::new(),
    );
    let mut self_atoms = Vec::new();
    for x in stationary_points(m, &samples) {
        for i in m.feasible_indices(x) {
            if m.actions[i]
                .kernel
                .atoms(x)
                .iter()
                .any(|a| (a.target - x).abs() <= KERNEL_MASS_TOL)
            {
                self_atoms.push(format!("action {i} at x = {x}"));
            }
        }
    }
    push(
        "kernel_self_atom",
        "no kernel atom at the source state where the flow is stationary",
        self_atoms.is_empty(),
        self_atoms.len() as f64,
        Some(0.0),
        self_atoms.join("; "),
    );
    let (glo, ghi) = grid.hull();
    let mut outside = 0.0f64;
    for a in &m.actions {
        let (tmin, tmax) = a.kernel.target_range(lo, hi);
        outside = outside.max(glo - tmin).max(tmax - ghi);
    }
    push(
        "kernel_in_grid_hull",
        "kernel atoms lie inside the grid hull",
        outside <= 0.0,
        outside.max(0.0),
        Some(0.0),
        String::new(),
    );

    // Integrability along flow lines.
    let lines: Vec<LineIntegrals> = samples.iter().map(|&x| line_integrals(m, x, horizon)).collect();
    let max_sup_rate = lines.iter().map(|l| l.sup_rate).fold(0.0, f64::max);
    push(
        "rate_integrability",
        "the largest feasible rate is integrable along flow lines up to t*",
        max_sup_rate.is_finite(),
        max_sup_rate,
        None,
        String::new(),
    );

    let mut floor_margin = f64::INFINITY;
    for &x in &samples {
        for i in m.feasible_indices(x) {
            floor_margin = floor_margin.min(m.actions[i].rate.eval(x) - m.xi.eval(x));
        }
    }
    push(
        "rate_floor",
        "every feasible rate dominates the floor xi",
        floor_margin >= 0.0,
        floor_margin,
        Some(0.0),
        String::new(),
    );

    let eps = m.params.eps_tail;
    let divergent = |l: &LineIntegrals| l.infinite && l.survival_end > eps;
    let k_xi = lines.iter().map(|l| l.k_floor).fold(0.0, f64::max);
    let k_div = lines.iter().filter(|l| divergent(l)).count();
    push(
        "floor_integrability",
        "K_xi = sup_x int_0^t* exp(-int xi) dt is finite",
        k_div == 0,
        k_xi,
        None,
        if k_div > 0 {
            format!("{k_div} flow lines not converged at horizon {horizon}")
        } else {
            String::new()
        },
    );
    let c_xi = lines.iter().map(|l| l.floor_cost).fold(0.0, f64::max);
    push(
        "floor_cost_integrability",
        "int_0^t* exp(-int xi) sup_a f dt is finite",
        k_div == 0 && c_xi.is_finite(),
        c_xi,
        None,
        if k_div > 0 {
            format!("{k_div} flow lines not converged at horizon {horizon}")
        } else {
            String::new()
        },
    );

    ValidationReport {
        model: m.name.clone(),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::Domain;

    fn grid() -> Grid {
        Grid::uniform(
            &Domain {
                lower: 0.0,
                upper: 1.0,
            },
            51,
        )
        .unwrap()
    }

    #[test]
    fn cycle1d_passes_with_unit_k() {
        let r = validate_assumptions(&fixtures::cycle1d(), &grid(), 50.0);
        assert!(r.all_pass(), "{:?}", r.failed().collect::<Vec<_>>());
        let k = r.get("floor_integrability").unwrap().measured;
        assert!((k - 1.0).abs() < 1e-6, "K = {k}");
    }

    #[test]
    fn decay1d_passes_with_unit_k() {
        let r = validate_assumptions(&fixtures::decay1d(), &grid(), 50.0);
        assert!(r.all_pass(), "{:?}", r.failed().collect::<Vec<_>>());
        let k = r.get("floor_integrability").unwrap().measured;
        assert!((k - 1.0).abs() < 1e-6, "K = {k}");
    }

    #[test]
    fn zero_rate_decay_fails_floor_checks() {
        let text = fixtures::DECAY1D.replace(
            "rate = { family = \"constant\", value = 1.0 }",
            "rate = { family = \"constant\", value = 0.0 }",
        );
        let m = ModelSpec::load(&text).unwrap();
        let r = validate_assumptions(&m, &grid(), 50.0);
        assert!(!r.get("rate_floor").unwrap().pass);
        assert!(!r.get("floor_integrability").unwrap().pass);
        assert!(r.get("kernel_mass").unwrap().pass);
    }

    #[test]
    fn every_check_listed_once() {
        let r = validate_assumptions(&fixtures::blowup1d(), &grid(), 50.0);
        let mut ids: Vec<_> = r.checks.iter().map(|c| c.id).collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }
}

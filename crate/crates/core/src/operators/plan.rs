//! The one-stage operator by backward recursion along flow lines.
//!
//! From the terminal value (best boundary option at `t*`, or `h` at the
//! tail truncation point), step back with
//! `w(t) = (1 - alpha dt) w(t + dt) + dt (min_a [f - lambda (w(t + dt) - Qh)] - rho)`,
//! coefficients taken at the left state of each step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{check_interior, exit_boundary, flow_point, hit_time, ControlPath, HitTime};
use crate::grid::{Grid, Stencil, ValueField};
use crate::model::{Action, KernelFamily, ModelSpec};

/// Largest admissible `(alpha + lambda_max) dt`.
pub const MAX_STEP_FACTOR: f64 = 0.5;

#[derive(Clone, Debug)]
enum Column {
    Const(f64),
    Steps(Vec<f64>),
}

impl Column {
    #[inline]
    fn get(&self, k: usize) -> f64 {
        match self {
            Column::Const(v) => *v,
            Column::Steps(v) => v[k],
        }
    }
}

/// Where `Qh` comes from for one action.
#[derive(Clone, Debug)]
enum KernelColumn {
    /// State-independent kernel: one value per application.
    Const,
    /// Single moving atom: one stencil per step.
    Point(Vec<Stencil>),
}

#[derive(Clone, Debug)]
struct ActionTable {
    action: usize,
    feasible: Option<Vec<bool>>,
    rate: Column,
    cost: Column,
    kernel: KernelColumn,
}

#[derive(Clone, Debug)]
enum BoundaryKernel {
    Const,
    Point(Stencil),
}

#[derive(Clone, Debug)]
struct BoundaryOption {
    action: usize,
    cost: f64,
    kernel: BoundaryKernel,
}

#[derive(Clone, Debug)]
enum Terminal {
    Boundary { z: f64, options: Vec<BoundaryOption> },
    Tail(Stencil),
}

#[derive(Clone, Debug)]
struct NodePlan {
    n: usize,
    dt: f64,
    tables: Vec<ActionTable>,
    terminal: Terminal,
    tail: Option<f64>,
    affine: Option<Affine>,
}

/// With one action and a state-independent kernel the recursion is affine:
/// `w(0) = gain w(t_end) + cost + rate Qh - unit rho`.
#[derive(Clone, Copy, Debug)]
struct Affine {
    gain: f64,
    cost: f64,
    rate: f64,
    unit: f64,
}

fn affine_coefficients(table: &ActionTable, n: usize, dt: f64, alpha: f64) -> Option<Affine> {
    if table.feasible.is_some() || !matches!(table.kernel, KernelColumn::Const) {
        return None;
    }
    let (mut gain, mut cost, mut rate, mut unit) = (1.0, 0.0, 0.0, 0.0);
    for k in 0..n {
        let lambda = table.rate.get(k);
        cost += gain * dt * table.cost.get(k);
        rate += gain * dt * lambda;
        unit += gain * dt;
        gain *= 1.0 - (alpha + lambda) * dt;
    }
    Some(Affine {
        gain,
        cost,
        rate,
        unit,
    })
}

/// Precomputed step tables for repeated application of the one-stage
/// operator at fixed `(model, grid, alpha)`.
#[derive(Clone, Debug)]
pub struct BellmanPlan {
    alpha: f64,
    grid: Grid,
    points: Vec<f64>,
    nodes: Vec<NodePlan>,
    /// Atoms of state-independent kernels, per action.
    const_atoms: Vec<Option<Vec<(f64, f64)>>>,
}

/// Value of the one-stage problem at one point, with the minimizing
/// feedback path.
#[derive(Clone, Debug, PartialEq)]
pub struct OneStageOutput {
    pub value: f64,
    pub trace: ControlPath,
    /// Best boundary action and its value `r + Qh`, when `t*` is finite.
    pub boundary: Option<(Action, f64)>,
    /// Survival bound at the truncation time, when `t*` is infinite.
    pub tail: Option<f64>,
}

/// First step-multiple time where `alpha t + int_0^t min_a lambda` reaches
/// `ln(1 / eps_tail)`.
fn tail_horizon(m: &ModelSpec, x: f64, alpha: f64) -> Result<(f64, f64)> {
    let target = -m.params.eps_tail.ln();
    let delta = m.params.delta;
    let floor = |p: f64| {
        m.feasible_indices(p)
            .map(|i| m.actions[i].rate.eval(p))
            .fold(f64::INFINITY, f64::min)
    };
    let closed = m.flow.is_closed_form();
    let (mut t, mut cur, mut integral) = (0.0f64, x, 0.0f64);
    let mut f0 = floor(cur);
    loop {
        let (xm, x1) = if closed {
            (flow_point(m, x, t + 0.5 * delta), flow_point(m, x, t + delta))
        } else {
            (flow_point(m, cur, 0.5 * delta), flow_point(m, cur, delta))
        };
        let (fm, f1) = (floor(xm), floor(x1));
        integral += delta / 6.0 * (f0 + 4.0 * fm + f1);
        t += delta;
        let exponent = alpha * t + integral;
        if exponent >= target {
            return Ok((t, (-exponent).exp()));
        }
        if t > m.params.t_cert {
            return Err(Error::Divergent {
                horizon: m.params.t_cert,
                factor: (-exponent).exp(),
            });
        }
        cur = x1;
        f0 = f1;
    }
}

impl BellmanPlan {
    pub fn new(m: &ModelSpec, grid: &Grid, alpha: f64) -> Result<BellmanPlan> {
        Self::for_points(m, grid, alpha, grid.nodes())
    }

    /// Plan for arbitrary interior points; `grid` is the grid of the value
    /// fields it will be applied to.
    pub fn for_points(m: &ModelSpec, grid: &Grid, alpha: f64, points: &[f64]) -> Result<BellmanPlan> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("discount rate {alpha} must be >= 0")));
        }
        let const_atoms = m
            .actions
            .iter()
            .map(|a| {
                a.kernel
                    .is_state_independent()
                    .then(|| a.kernel.atoms(0.0).iter().map(|k| (k.target, k.weight)).collect())
            })
            .collect();
        let nodes = points
            .par_iter()
            .map(|&x| node_plan(m, grid, alpha, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(BellmanPlan {
            alpha,
            grid: grid.clone(),
            points: points.to_vec(),
            nodes,
            const_atoms,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn const_qh(&self, h: &ValueField) -> Result<Vec<f64>> {
        if h.grid != self.grid {
            return Err(Error::InvalidArgument("value field on a different grid".into()));
        }
        self.const_atoms
            .iter()
            .map(|atoms| match atoms {
                Some(atoms) => atoms
                    .iter()
                    .map(|&(z, w)| h.eval(z).map(|v| w * v))
                    .sum::<Result<f64>>(),
                None => Ok(f64::NAN),
            })
            .collect()
    }

    /// `T_alpha(rho, h)` at every planned point, with boundary values
    /// `min_a {r + Qh}` at every reachable boundary point.
    pub fn apply(&self, rho: f64, h: &ValueField) -> Result<ValueField> {
        let q = self.const_qh(h)?;
        let values = self
            .nodes
            .par_iter()
            .map(|node| node_value(node, self.alpha, rho, &q, h, None).map(|(v, _)| v))
            .collect::<Result<Vec<f64>>>()?;
        let mut boundary_values: Vec<(f64, f64)> = Vec::new();
        for node in &self.nodes {
            if let Terminal::Boundary { z, options } = &node.terminal {
                if !boundary_values.iter().any(|(b, _)| b == z) {
                    let (_, v) = best_boundary(options, &q, h);
                    boundary_values.push((*z, v));
                }
            }
        }
        boundary_values.sort_by(|a, b| a.0.total_cmp(&b.0));
        let grid = if self.points == self.grid.nodes() {
            self.grid.clone()
        } else {
            Grid::new(self.points.clone())?
        };
        let mut w = ValueField::new(grid, values)?;
        w.boundary_values = boundary_values;
        Ok(w)
    }

    fn output(&self, i: usize, rho: f64, h: &ValueField) -> Result<OneStageOutput> {
        let q = self.const_qh(h)?;
        let node = &self.nodes[i];
        let mut trace = Vec::with_capacity(node.n);
        let (value, boundary) = node_value(node, self.alpha, rho, &q, h, Some(&mut trace))?;
        trace.reverse();
        let mut breakpoints = Vec::new();
        let mut actions = Vec::new();
        for (k, &a) in trace.iter().enumerate() {
            if actions.last() != Some(&Action(a)) {
                breakpoints.push(k as f64 * node.dt);
                actions.push(Action(a));
            }
        }
        let boundary_action = boundary.map_or(*actions.last().expect("at least one step"), |b| b.0);
        Ok(OneStageOutput {
            value,
            trace: ControlPath::new(breakpoints, actions, boundary_action)?,
            boundary,
            tail: node.tail,
        })
    }
}

fn node_plan(m: &ModelSpec, grid: &Grid, alpha: f64, x: f64) -> Result<NodePlan> {
    check_interior(m, x)?;
    let hit = hit_time(m, x);
    let (end, tail) = match hit {
        HitTime::Finite(t) => (t, None),
        HitTime::Infinite { .. } => {
            let (t, s) = tail_horizon(m, x, alpha)?;
            (t, Some(s))
        }
    };
    let n = ((end / m.params.delta - 1e-9).ceil() as usize).max(1);
    let dt = end / n as f64;

    let closed = m.flow.is_closed_form();
    let mut xs = Vec::with_capacity(n);
    let mut cur = x;
    for k in 0..n {
        if closed {
            cur = flow_point(m, x, k as f64 * dt);
        } else if k > 0 {
            cur = flow_point(m, cur, dt);
        }
        xs.push(cur);
    }

    let mut tables = Vec::new();
    let mut any_feasible = vec![false; n];
    let mut rate_max = 0.0f64;
    for (i, spec) in m.actions.iter().enumerate() {
        let mask: Vec<bool> = xs.iter().map(|&p| spec.feasible.allows(p)).collect();
        if !mask.iter().any(|&b| b) {
            continue;
        }
        for (k, &ok) in mask.iter().enumerate() {
            if ok {
                any_feasible[k] = true;
                rate_max = rate_max.max(spec.rate.eval(xs[k]));
            }
        }
        let column = |f: &crate::model::ScalarFamily, what: &'static str| -> Result<Column> {
            if f.is_constant() {
                let v = f.eval(x);
                check_finite(v, what, x)?;
                Ok(Column::Const(v))
            } else {
                let v: Vec<f64> = xs.iter().map(|&p| f.eval(p)).collect();
                if let Some(k) = v.iter().position(|c| !c.is_finite()) {
                    return Err(Error::NonFinite { what, x: xs[k] });
                }
                Ok(Column::Steps(v))
            }
        };
        let kernel = match &spec.kernel {
            KernelFamily::AffinePoint { intercept, slope } => KernelColumn::Point(
                xs.iter()
                    .map(|&p| grid.stencil(intercept + slope * p))
                    .collect::<Result<_>>()?,
            ),
            _ => KernelColumn::Const,
        };
        tables.push(ActionTable {
            action: i,
            feasible: (!mask.iter().all(|&b| b)).then_some(mask),
            rate: column(&spec.rate, "rate")?,
            cost: column(&spec.running_cost, "running cost")?,
            kernel,
        });
    }
    if let Some(k) = any_feasible.iter().position(|&b| !b) {
        return Err(Error::InvalidArgument(format!("no feasible action at x = {}", xs[k])));
    }
    let factor = (alpha + rate_max) * dt;
    if factor > MAX_STEP_FACTOR {
        return Err(Error::StepSize { value: factor });
    }

    let terminal = match hit {
        HitTime::Finite(_) => {
            let z = exit_boundary(m, x);
            let mut options = Vec::new();
            for i in m.feasible_indices(z) {
                let spec = &m.actions[i];
                let cost = spec.boundary_cost.eval(z);
                check_finite(cost, "boundary cost", z)?;
                let kernel = match &spec.kernel {
                    KernelFamily::AffinePoint { intercept, slope } => {
                        BoundaryKernel::Point(grid.stencil(intercept + slope * z)?)
                    }
                    _ => BoundaryKernel::Const,
                };
                options.push(BoundaryOption {
                    action: i,
                    cost,
                    kernel,
                });
            }
            if options.is_empty() {
                return Err(Error::InvalidArgument(format!("no feasible action at z = {z}")));
            }
            Terminal::Boundary { z, options }
        }
        HitTime::Infinite { .. } => Terminal::Tail(grid.stencil_clamped(flow_point(m, x, end))),
    };
    let affine = match tables.as_slice() {
        [t] => affine_coefficients(t, n, dt, alpha),
        _ => None,
    };
    Ok(NodePlan {
        n,
        dt,
        tables,
        terminal,
        tail,
        affine,
    })
}

fn check_finite(v: f64, what: &'static str, x: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, x })
    }
}

fn best_boundary(options: &[BoundaryOption], q: &[f64], h: &ValueField) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for o in options {
        let qh = match &o.kernel {
            BoundaryKernel::Const => q[o.action],
            BoundaryKernel::Point(s) => s.apply(&h.values),
        };
        let v = o.cost + qh;
        if v < best.1 {
            best = (o.action, v);
        }
    }
    best
}

#[inline]
fn table_qh(t: &ActionTable, k: usize, q: &[f64], h: &ValueField) -> f64 {
    match &t.kernel {
        KernelColumn::Const => q[t.action],
        KernelColumn::Point(s) => s[k].apply(&h.values),
    }
}

fn node_value(
    node: &NodePlan,
    alpha: f64,
    rho: f64,
    q: &[f64],
    h: &ValueField,
    mut trace: Option<&mut Vec<usize>>,
) -> Result<(f64, Option<(Action, f64)>)> {
    let (mut w, boundary) = match &node.terminal {
        Terminal::Boundary { options, .. } => {
            let (a, v) = best_boundary(options, q, h);
            (v, Some((Action(a), v)))
        }
        Terminal::Tail(s) => (s.apply(&h.values), None),
    };
    let dt = node.dt;
    let decay = 1.0 - alpha * dt;

    if let (None, Some(af)) = (&trace, &node.affine) {
        let qv = q[node.tables[0].action];
        return finish(af.gain * w + af.cost + af.rate * qv - af.unit * rho, boundary);
    }

    for k in (0..node.n).rev() {
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        for t in &node.tables {
            if let Some(mask) = &t.feasible {
                if !mask[k] {
                    continue;
                }
            }
            let rate = t.rate.get(k);
            let mut ham = t.cost.get(k);
            if rate != 0.0 {
                ham -= rate * (w - table_qh(t, k, q, h));
            }
            if ham < best {
                best = ham;
                arg = t.action;
            }
        }
        w = decay * w + dt * (best - rho);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(arg);
        }
    }
    finish(w, boundary)
}

fn finish(w: f64, boundary: Option<(Action, f64)>) -> Result<(f64, Option<(Action, f64)>)> {
    if w.is_finite() {
        Ok((w, boundary))
    } else {
        Err(Error::NonFinite {
            what: "one-stage value",
            x: f64::NAN,
        })
    }
}

/// `T_alpha(rho, h)` on the nodes of `grid`.
pub fn apply_bellman(
    m: &ModelSpec,
    grid: &Grid,
    alpha: f64,
    rho: f64,
    h: &ValueField,
) -> Result<ValueField> {
    BellmanPlan::new(m, grid, alpha)?.apply(rho, h)
}

/// The one-stage value at `x` with the minimizing feedback path.
pub fn one_stage_value(
    m: &ModelSpec,
    x: f64,
    alpha: f64,
    rho: f64,
    h: &ValueField,
) -> Result<OneStageOutput> {
    let plan = BellmanPlan::for_points(m, &h.grid, alpha, &[x])?;
    plan.output(0, rho, h)
}

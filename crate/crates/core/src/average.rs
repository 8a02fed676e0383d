//! Long-run average cost by vanishing discount.
//!
//! For a decreasing schedule `alpha_k`, solve the discounted problem and set
//! `rho_k = alpha_k J_k(x0)`, `h_k = J_k - J_k(x0)`. The last pair `(rho, h)`
//! is checked against the average-cost inequality `h >= T(rho, h)`, and the
//! feedback policy is read off `w = T(rho, h)`.

use serde::Serialize;

use crate::discounted::{feedback_policy, value_iteration, FeedbackPolicy, DEFAULT_MAX_ITER};
use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::model::ModelSpec;
use crate::operators::apply_bellman;
use crate::simulate::{mc_average_cost, observable_over_time, ControlStrategy, McEstimate};

/// Consecutive growth factor of `rho_k` or `span h_k` treated as blow-up.
pub const BLOW_UP_FACTOR: f64 = 1.5;
/// Default tolerance of the average-cost inequality.
pub const ACOI_TOL: f64 = 1e-3;

/// `alpha_k = 0.5 * 2^-k` for `k = 0..=8`.
pub fn default_schedule() -> Vec<f64> {
    (0..=8).map(|k| 0.5 * 0.5f64.powi(k)).collect()
}

/// One discounted solve of the sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub rho: f64,
    pub h_sup: f64,
    pub h_inf: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Empirical bounds over a sweep: `rho_k <= c`, `-k_h <= h_k <= b`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundednessReport {
    pub c: f64,
    pub k_h: f64,
    /// Pointwise maximum of the `h_k`.
    pub b: Vec<f64>,
    /// `rho_k` or `span h_k` grew by [`BLOW_UP_FACTOR`] at each of the last
    /// two schedule steps.
    pub blow_up: bool,
}

/// Monte Carlo cross-check settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McOptions {
    pub horizon: f64,
    pub n_rep: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    /// Reference state; must be a grid node. Defaults to the middle node.
    pub x0: Option<f64>,
    /// Strictly decreasing positive discount rates.
    pub schedule: Vec<f64>,
    /// Value-iteration tolerance at each rate.
    pub tol: f64,
    pub max_iter: usize,
    pub mc: Option<McOptions>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            x0: None,
            schedule: default_schedule(),
            tol: 1e-6,
            max_iter: DEFAULT_MAX_ITER,
            mc: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AverageSolution {
    pub rho: f64,
    pub x0: f64,
    /// Bias, zero at `x0`.
    pub h: ValueField,
    /// `T(rho, h)`.
    pub w: ValueField,
    pub policy: FeedbackPolicy,
    pub sweep_trace: Vec<SweepPoint>,
    /// `T(rho, h) - h`.
    pub residual_field: ValueField,
    pub residual_max: f64,
    /// `max_{k >= K/2} sup |h_k - h_K|`.
    pub spread: f64,
    pub boundedness: BoundednessReport,
    pub mc_check: Option<McEstimate>,
}

fn span(h: &ValueField) -> f64 {
    h.sup() - h.inf()
}

/// Whether `v` grew by the blow-up factor at both of its last two steps.
fn grows(v: &[f64]) -> bool {
    let n = v.len();
    n >= 3
        && v[n - 2] > 0.0
        && v[n - 1] >= BLOW_UP_FACTOR * v[n - 2]
        && v[n - 2] >= BLOW_UP_FACTOR * v[n - 3]
}

pub fn boundedness_report(trace: &[SweepPoint], h_fields: &[ValueField]) -> Result<BoundednessReport> {
    if trace.len() < 2 || h_fields.len() != trace.len() {
        return Err(Error::InvalidArgument(
            "at least 2 sweep points with matching bias fields required".into(),
        ));
    }
    let c = trace.iter().map(|p| p.rho).fold(f64::NEG_INFINITY, f64::max);
    let k_h = -h_fields.iter().map(ValueField::inf).fold(f64::INFINITY, f64::min);
    let n = h_fields[0].values.len();
    let b = (0..n)
        .map(|i| h_fields.iter().map(|h| h.values[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let rhos: Vec<f64> = trace.iter().map(|p| p.rho).collect();
    let spans: Vec<f64> = h_fields.iter().map(span).collect();
    Ok(BoundednessReport {
        c,
        k_h,
        b,
        blow_up: grows(&rhos) || grows(&spans),
    })
}

fn reference_index(grid: &Grid, x0: Option<f64>) -> Result<usize> {
    match x0 {
        None => Ok(grid.midpoint_index()),
        Some(x) => {
            let i = grid.nearest(x);
            if (grid.nodes()[i] - x).abs() <= 1e-9 {
                Ok(i)
            } else {
                Err(Error::InvalidArgument(format!("x0 = {x} is not a grid node")))
            }
        }
    }
}

pub fn vanishing_sweep(m: &ModelSpec, grid: &Grid, opts: &SweepOptions) -> Result<AverageSolution> {
    let schedule = &opts.schedule;
    if schedule.is_empty()
        || schedule.iter().any(|a| !(*a > 0.0 && a.is_finite()))
        || schedule.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidArgument(
            "discount schedule must be positive and strictly decreasing".into(),
        ));
    }
    let i0 = reference_index(grid, opts.x0)?;
    let x0 = grid.nodes()[i0];
    let mut trace = Vec::with_capacity(schedule.len());
    let mut fields: Vec<ValueField> = Vec::with_capacity(schedule.len());
    for &alpha in schedule {
        let sol = value_iteration(m, grid, alpha, opts.tol, opts.max_iter)?;
        let j0 = sol.value.values[i0];
        let h = sol.value.map(|v| v - j0);
        trace.push(SweepPoint {
            alpha,
            rho: alpha * j0,
            h_sup: h.sup(),
            h_inf: h.inf(),
            iterations: sol.iterations,
            residual: sol.residual,
        });
        fields.push(h);
        if trace.len() >= 3 {
            let report = boundedness_report(&trace, &fields)?;
            if report.blow_up {
                return Err(Error::SweepUnbounded {
                    alpha,
                    report: Box::new(report),
                });
            }
        }
    }
    let boundedness = if trace.len() >= 2 {
        boundedness_report(&trace, &fields)?
    } else {
        let h = &fields[0];
        BoundednessReport {
            c: trace[0].rho,
            k_h: -h.inf(),
            b: h.values.clone(),
            blow_up: false,
        }
    };
    let rho = trace.last().expect("non-empty").rho;
    let h = fields.last().expect("non-empty").clone();
    let k = fields.len() - 1;
    let spread = fields[k / 2..]
        .iter()
        .map(|f| f.sup_distance(&h))
        .fold(0.0, f64::max);
    let w = apply_bellman(m, grid, 0.0, rho, &h)?;
    let residual_field = w.sub(&h)?;
    let residual_max = residual_field.sup();
    let policy = feedback_policy(m, grid, &w, &h)?;
    let mc_check = match opts.mc {
        Some(mc) => Some(mc_average_cost(
            m,
            x0,
            &ControlStrategy::Feedback(policy.clone()),
            mc.horizon,
            mc.n_rep,
            mc.seed,
        )?),
        None => None,
    };
    Ok(AverageSolution {
        rho,
        x0,
        h,
        w,
        policy,
        sweep_trace: trace,
        residual_field,
        residual_max,
        spread,
        boundedness,
        mc_check,
    })
}

/// `T(rho, h) - h` at every grid node.
pub fn optimality_residual(m: &ModelSpec, grid: &Grid, rho: f64, h: &ValueField) -> Result<ValueField> {
    apply_bellman(m, grid, 0.0, rho, h)?.sub(h)
}

/// Where a residual field satisfies the average-cost equation or inequality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualClass {
    pub max: f64,
    pub min: f64,
    /// `residual <= tol` at every node.
    pub inequality: bool,
    /// `|residual| <= tol` at every node.
    pub equation: bool,
}

pub fn classify_residual(residual: &ValueField, tol: f64) -> ResidualClass {
    let (max, min) = (residual.sup(), residual.inf());
    ResidualClass {
        max,
        min,
        inequality: max <= tol,
        equation: max <= tol && min >= -tol,
    }
}

/// `E[g(t, X(t))] / t` at one horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftRow {
    pub horizon: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    /// A priori bound on `|g|` used for the trend flag.
    pub scale: f64,
    /// The estimate at the longest horizon is within `scale / t` plus three
    /// standard errors.
    pub vanishing: bool,
}

/// Estimates `E[h(X(t))] / t` along increasing horizons under `strategy`.
pub fn drift_condition_check(
    m: &ModelSpec,
    strategy: &ControlStrategy,
    x0: f64,
    h: &ValueField,
    horizons: &[f64],
    n_rep: usize,
    seed: u64,
) -> Result<DriftReport> {
    let scale = h.values.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    drift_trend(m, strategy, x0, |_, x| h.eval_clamped(x), scale, horizons, n_rep, seed)
}

/// [`drift_condition_check`] for a time-dependent observable `g(t, x)`
/// with a claimed bound `scale`.
#[allow(clippy::too_many_arguments)]
pub fn drift_trend(
    m: &ModelSpec,
    strategy: &ControlStrategy,
    x0: f64,
    g: impl Fn(f64, f64) -> f64 + Sync,
    scale: f64,
    horizons: &[f64],
    n_rep: usize,
    seed: u64,
) -> Result<DriftReport> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] <= 0.0 {
        return Err(Error::InvalidArgument("horizons must be positive and increasing".into()));
    }
    let rows: Vec<DriftRow> = observable_over_time(m, x0, strategy, g, horizons, n_rep, seed)?
        .into_iter()
        .map(|e| DriftRow {
            horizon: e.horizon,
            mean: e.mean,
            stderr: e.stderr,
        })
        .collect();
    let last = rows.last().expect("non-empty");
    let vanishing = last.mean.abs() <= scale / last.horizon + 3.0 * last.stderr + 1e-12;
    Ok(DriftReport {
        rows,
        scale,
        vanishing,
    })
}

use thiserror::Error;

use crate::average::BoundednessReport;

/// Errors raised by model loading, the solvers and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("unknown {kind} family `{id}`")]
    UnknownFamily { kind: &'static str, id: String },

    #[error("parameter `{name}` out of admissible range: {reason}")]
    ParameterRange { name: String, reason: String },

    #[error("kernel mass {mass} ≠ 1")]
    KernelMass { mass: f64 },

    #[error("state {x} outside the closed domain [{lower}, {upper}]")]
    OutsideDomain { x: f64, lower: f64, upper: f64 },

    #[error("action {action} is not feasible at x = {x}")]
    Infeasible { action: usize, x: f64 },

    #[error("non-finite evaluation of {what} at x = {x}")]
    NonFinite { what: &'static str, x: f64 },

    #[error("time {t} exceeds the boundary hitting time {t_star} from x = {x}")]
    BeyondHitTime { x: f64, t: f64, t_star: f64 },

    #[error("integral diverges: survival factor {factor} not below tolerance within horizon {horizon}")]
    Divergent { horizon: f64, factor: f64 },

    #[error("point {x} outside the grid hull [{lower}, {upper}]")]
    OutsideGridHull { x: f64, lower: f64, upper: f64 },

    #[error("step-size condition violated: (alpha + rate_max) * delta = {value} > 0.5")]
    StepSize { value: f64 },

    #[error("value iteration did not converge in {iterations} iterations (last sup-delta {delta})")]
    NotConverged { iterations: usize, delta: f64 },

    #[error("monotone iteration violated at iteration {iteration}: v_(m+1) - v_m = {drop}")]
    Monotonicity { iteration: usize, drop: f64 },

    #[error("vanishing-discount sweep unbounded at alpha = {alpha}")]
    SweepUnbounded {
        alpha: f64,
        report: Box<BoundednessReport>,
    },

    #[error("more than {limit} jumps before time {time}")]
    Explosion { limit: usize, time: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

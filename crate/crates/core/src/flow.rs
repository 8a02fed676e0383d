//! The deterministic flow, boundary hitting times, control paths and
//! cumulative hazards along flow lines.

use crate::error::{Error, Result};
use crate::model::{Action, FlowFamily, ModelSpec, StatePoint};

/// Time tolerance of the hitting-time bisection.
pub const HIT_TIME_TOL: f64 = 1e-10;

/// Time for the flow started at `x` to reach the boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HitTime {
    Finite(f64),
    /// The boundary is never reached; the certificate is analytic and
    /// `certified_horizon` is the horizon it was issued for.
    Infinite { certified_horizon: f64 },
}

impl HitTime {
    pub fn finite(&self) -> Option<f64> {
        match *self {
            HitTime::Finite(t) => Some(t),
            HitTime::Infinite { .. } => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, HitTime::Finite(_))
    }

    /// `t*` as a real, `+inf` when infinite.
    pub fn value(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

#[inline]
fn rk4_step(flow: &FlowFamily, x: f64, h: f64) -> f64 {
    let k1 = flow.velocity(x);
    let k2 = flow.velocity(x + 0.5 * h * k1);
    let k3 = flow.velocity(x + 0.5 * h * k2);
    let k4 = flow.velocity(x + h * k3);
    x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// `phi(x, t)` without domain checks. Closed-form families are exact;
/// polynomial drifts use `ceil(t / delta_flow)` equal RK4 steps.
pub fn flow_point(m: &ModelSpec, x: f64, t: f64) -> f64 {
    match &m.flow {
        FlowFamily::LinearDrift { velocity } => x + velocity * t,
        FlowFamily::ExponentialDecay { center, rate } => center + (x - center) * (-rate * t).exp(),
        flow @ FlowFamily::PolynomialDrift { .. } => {
            if t <= 0.0 {
                return x;
            }
            let n = (t / m.params.delta_flow - 1e-9).ceil().max(1.0) as usize;
            let h = t / n as f64;
            (0..n).fold(x, |y, _| rk4_step(flow, y, h))
        }
    }
}

/// `phi(x, t)` for `0 <= t <= t*(x)`; at `t = t*(x)` the boundary point.
pub fn flow_at(m: &ModelSpec, x: f64, t: f64) -> Result<StatePoint> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative flow time {t}")));
    }
    check_interior(m, x)?;
    let hit = hit_time(m, x);
    if let HitTime::Finite(ts) = hit {
        if t > ts + HIT_TIME_TOL {
            return Err(Error::BeyondHitTime { x, t, t_star: ts });
        }
        if t >= ts - HIT_TIME_TOL {
            return Ok(StatePoint::boundary(exit_boundary(m, x)));
        }
    }
    let y = flow_point(m, x, t);
    Ok(StatePoint::interior(y))
}

pub(crate) fn check_interior(m: &ModelSpec, x: f64) -> Result<()> {
    if x.is_finite() && m.domain.contains_interior(x) {
        Ok(())
    } else {
        Err(Error::OutsideDomain {
            x,
            lower: m.domain.lower,
            upper: m.domain.upper,
        })
    }
}

/// The boundary point in the direction of motion at `x`.
pub(crate) fn exit_boundary(m: &ModelSpec, x: f64) -> f64 {
    if m.flow.velocity(x) > 0.0 {
        m.domain.upper
    } else {
        m.domain.lower
    }
}

/// Real roots of the drift polynomial.
fn drift_roots(coefficients: &[f64]) -> Vec<f64> {
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
            // Numerically stable pair.
            let q = -0.5 * (c1 + c1.signum() * s);
            if q == 0.0 {
                vec![0.0]
            } else {
                vec![q / c2, c0 / q]
            }
        }
    }
}

/// Time for the flow from `x` to reach `y`, when it does.
pub fn time_to_reach(m: &ModelSpec, x: f64, y: f64) -> Option<f64> {
    if y == x {
        return Some(0.0);
    }
    if !m.domain.contains_closure(y) {
        return None;
    }
    let v = m.flow.velocity(x);
    if v == 0.0 || (y - x).signum() != v.signum() {
        return None;
    }
    match &m.flow {
        FlowFamily::LinearDrift { velocity } => Some((y - x) / velocity),
        FlowFamily::ExponentialDecay { center, rate } => {
            let ratio = (y - center) / (x - center);
            if !(ratio > 0.0) {
                return None;
            }
            let t = -ratio.ln() / rate;
            (t.is_finite() && t >= 0.0).then_some(t)
        }
        FlowFamily::PolynomialDrift { coefficients } => {
            let (a, b) = if x < y { (x, y) } else { (y, x) };
            if drift_roots(coefficients)
                .iter()
                .any(|&r| (a..=b).contains(&r) && r != x)
            {
                return None;
            }
            Some(march_to(m, x, y))
        }
    }
}

/// RK4 marching from `x` until `y` is crossed, then bisection on the
/// last step. The drift has no root between `x` and `y`.
fn march_to(m: &ModelSpec, x: f64, y: f64) -> f64 {
    let flow = &m.flow;
    let d = (y - x).signum();
    let h = m.params.delta_flow;
    // |y - x| / min |v| bounds the travel time.
    let mut vmin = flow.velocity(x).abs().min(flow.velocity(y).abs());
    if let FlowFamily::PolynomialDrift { coefficients } = flow {
        if coefficients.len() == 3 && coefficients[2] != 0.0 {
            let vertex = -coefficients[1] / (2.0 * coefficients[2]);
            if (x.min(y)..=x.max(y)).contains(&vertex) {
                vmin = vmin.min(flow.velocity(vertex).abs());
            }
        }
    }
    let bracket = (y - x).abs() / vmin;
    let max_steps = (bracket / h).ceil() as usize + 2;
    let mut t = 0.0;
    let mut cur = x;
    for _ in 0..max_steps {
        let next = rk4_step(flow, cur, h);
        if d * (next - y) >= 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > HIT_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                if d * (rk4_step(flow, cur, mid) - y) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return t + hi;
        }
        cur = next;
        t += h;
    }
    t
}

/// `t*(x)` for an interior `x`.
pub fn hit_time(m: &ModelSpec, x: f64) -> HitTime {
    let infinite = HitTime::Infinite {
        certified_horizon: m.params.t_cert,
    };
    if m.flow.velocity(x) == 0.0 {
        return infinite;
    }
    match time_to_reach(m, x, exit_boundary(m, x)) {
        Some(t) => HitTime::Finite(t),
        None => infinite,
    }
}

/// `max |phi(x, t + s) - phi(phi(x, t), s)|` over the samples.
pub fn check_semigroup(m: &ModelSpec, samples: &[(f64, f64, f64)]) -> f64 {
    samples
        .iter()
        .map(|&(x, t, s)| (flow_point(m, x, t + s) - flow_point(m, flow_point(m, x, t), s)).abs())
        .fold(0.0, f64::max)
}

/// Piecewise-constant actions along a flow line plus the action applied
/// on reaching the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPath {
    breakpoints: Vec<f64>,
    actions: Vec<Action>,
    boundary_action: Action,
}

impl ControlPath {
    pub fn constant(a: Action) -> ControlPath {
        ControlPath {
            breakpoints: vec![0.0],
            actions: vec![a],
            boundary_action: a,
        }
    }

    /// Segment `i` is `[breakpoints[i], breakpoints[i + 1])`; the last
    /// segment is unbounded.
    pub fn new(
        breakpoints: Vec<f64>,
        actions: Vec<Action>,
        boundary_action: Action,
    ) -> Result<ControlPath> {
        if breakpoints.first() != Some(&0.0) || breakpoints.len() != actions.len() {
            return Err(Error::InvalidArgument(
                "control path needs breakpoints starting at 0, one action per segment".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1]) || !w[1].is_finite()) {
            return Err(Error::InvalidArgument(
                "control path breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(ControlPath {
            breakpoints,
            actions,
            boundary_action,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn boundary_action(&self) -> Action {
        self.boundary_action
    }

    pub fn action_at(&self, t: f64) -> Action {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        self.actions[i.saturating_sub(1)]
    }

    /// `(start, end, action)` per segment; the last `end` is `+inf`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, Action)> + '_ {
        (0..self.actions.len()).map(move |i| {
            let end = self
                .breakpoints
                .get(i + 1)
                .copied()
                .unwrap_or(f64::INFINITY);
            (self.breakpoints[i], end, self.actions[i])
        })
    }

    /// The path seen from time `t` onwards.
    pub fn shifted(&self, t: f64) -> ControlPath {
        let first = self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1);
        let mut breakpoints = vec![0.0];
        breakpoints.extend(self.breakpoints[first + 1..].iter().map(|b| b - t));
        ControlPath {
            breakpoints,
            actions: self.actions[first..].to_vec(),
            boundary_action: self.boundary_action,
        }
    }

    /// Drops segments starting at or after `t`.
    pub(crate) fn truncated(&self, t: f64) -> ControlPath {
        let keep = self.breakpoints.partition_point(|&b| b < t).max(1);
        ControlPath {
            breakpoints: self.breakpoints[..keep].to_vec(),
            actions: self.actions[..keep].to_vec(),
            boundary_action: self.boundary_action,
        }
    }
}

/// One quadrature step along a path: values at the start, midpoint and
/// end, with the action frozen over the step.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PathStep {
    pub t0: f64,
    pub h: f64,
    pub action: Action,
    pub x: [f64; 3],
    pub rate: [f64; 3],
    /// Cumulative hazard at `t0`.
    pub hazard0: f64,
}

impl PathStep {
    /// Hazard at `t0 + s h`, from the exact integral of the quadratic
    /// interpolant of the rate.
    pub fn hazard_at(&self, s: f64) -> f64 {
        let s2 = s * s;
        let s3 = s2 * s;
        let i0 = 2.0 * s3 / 3.0 - 1.5 * s2 + s;
        let im = 2.0 * s2 - 4.0 * s3 / 3.0;
        let i1 = 2.0 * s3 / 3.0 - 0.5 * s2;
        self.hazard0 + self.h * (self.rate[0] * i0 + self.rate[1] * im + self.rate[2] * i1)
    }

    pub fn hazard_mid(&self) -> f64 {
        self.hazard0 + self.h / 24.0 * (5.0 * self.rate[0] + 8.0 * self.rate[1] - self.rate[2])
    }

    pub fn hazard_end(&self) -> f64 {
        self.hazard0 + self.h / 6.0 * (self.rate[0] + 4.0 * self.rate[1] + self.rate[2])
    }

    pub fn times(&self) -> [f64; 3] {
        [self.t0, self.t0 + 0.5 * self.h, self.t0 + self.h]
    }
}

/// Lazily produces [`PathStep`]s along the flow from `x` under a control
/// path, respecting path breakpoints, up to `end` (possibly `+inf`).
pub(crate) struct PathStepper<'a> {
    m: &'a ModelSpec,
    x0: f64,
    path: &'a ControlPath,
    end: f64,
    /// Boundary point to snap the final position to, when `end = t*`.
    snap: Option<f64>,
    delta: f64,
    seg: usize,
    /// Steps remaining in the current finite piece; `None` when unbounded.
    remaining: Option<usize>,
    h: f64,
    t: f64,
    x: f64,
    hazard: f64,
}

impl<'a> PathStepper<'a> {
    pub fn new(
        m: &'a ModelSpec,
        x0: f64,
        path: &'a ControlPath,
        end: f64,
        snap: Option<f64>,
    ) -> PathStepper<'a> {
        let mut s = PathStepper {
            m,
            x0,
            path,
            end,
            snap,
            delta: m.params.delta_quad,
            seg: 0,
            remaining: Some(0),
            h: 0.0,
            t: 0.0,
            x: x0,
            hazard: 0.0,
        };
        s.enter_segment(0);
        s
    }

    fn enter_segment(&mut self, seg: usize) {
        self.seg = seg;
        let (_, seg_end, _) = self.segment(seg);
        let stop = seg_end.min(self.end);
        if stop.is_finite() {
            let len = (stop - self.t).max(0.0);
            let n = (len / self.delta - 1e-9).ceil() as usize;
            self.remaining = Some(n);
            self.h = if n > 0 { len / n as f64 } else { 0.0 };
        } else {
            self.remaining = None;
            self.h = self.delta;
        }
    }

    fn segment(&self, i: usize) -> (f64, f64, Action) {
        let bp = self.path.breakpoints();
        let end = bp.get(i + 1).copied().unwrap_or(f64::INFINITY);
        (bp[i], end, self.path.actions()[i])
    }

    fn position(&self, from: f64, t_from: f64, dt: f64) -> f64 {
        if self.m.flow.is_closed_form() {
            flow_point(self.m, self.x0, t_from + dt)
        } else {
            flow_point(self.m, from, dt)
        }
    }

    fn rate(&self, x: f64, a: Action) -> f64 {
        self.m.actions[a.0].rate.eval(x)
    }

    pub fn next_step(&mut self) -> Option<Result<PathStep>> {
        loop {
            match self.remaining {
                Some(0) => {
                    let (_, seg_end, _) = self.segment(self.seg);
                    if seg_end >= self.end || self.seg + 1 >= self.path.actions().len() {
                        return None;
                    }
                    self.t = seg_end;
                    self.enter_segment(self.seg + 1);
                }
                _ => break,
            }
        }
        let (_, _, action) = self.segment(self.seg);
        let h = self.h;
        let last = self.remaining == Some(1)
            && self.path.breakpoints().get(self.seg + 1).is_none_or(|&b| b >= self.end);
        let xm = self.position(self.x, self.t, 0.5 * h);
        let mut x1 = self.position(self.x, self.t, h);
        if last {
            if let Some(z) = self.snap {
                x1 = z;
            }
        }
        let spec = &self.m.actions[action.0];
        for &p in &[self.x, xm] {
            if !spec.feasible.allows(p) {
                return Some(Err(Error::Infeasible {
                    action: action.0,
                    x: p,
                }));
            }
        }
        let rate = [self.rate(self.x, action), self.rate(xm, action), self.rate(x1, action)];
        if rate.iter().any(|r| !r.is_finite()) {
            return Some(Err(Error::NonFinite {
                what: "rate",
                x: self.x,
            }));
        }
        let step = PathStep {
            t0: self.t,
            h,
            action,
            x: [self.x, xm, x1],
            rate,
            hazard0: self.hazard,
        };
        self.hazard = step.hazard_end();
        self.x = x1;
        if let Some(r) = self.remaining.as_mut() {
            *r -= 1;
            // Land exactly on the piece end to keep breakpoints exact.
            if *r == 0 {
                let (_, seg_end, _) = self.segment(self.seg);
                self.t = seg_end.min(self.end);
            } else {
                self.t += h;
            }
        } else {
            self.t += h;
        }
        Some(Ok(step))
    }
}

/// `Lambda(t) = int_0^t lambda(phi(x, s), a(s)) ds` for `0 <= t <= t*(x)`.
pub fn hazard(m: &ModelSpec, x: f64, path: &ControlPath, t: f64) -> Result<f64> {
    check_interior(m, x)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative time {t}")));
    }
    let hit = hit_time(m, x);
    let snap = match hit {
        HitTime::Finite(ts) if t > ts + HIT_TIME_TOL => {
            return Err(Error::BeyondHitTime { x, t, t_star: ts })
        }
        HitTime::Finite(ts) if t >= ts - HIT_TIME_TOL => Some(exit_boundary(m, x)),
        _ => None,
    };
    if t == 0.0 {
        return Ok(0.0);
    }
    let mut stepper = PathStepper::new(m, x, path, t, snap);
    let mut total = 0.0;
    while let Some(step) = stepper.next_step() {
        total = step?.hazard_end();
    }
    Ok(total)
}

//! Random models on (0, 1) for property tests.

#![allow(dead_code)]

use pdmp_core::flow::ControlPath;
use pdmp_core::model::{Action, ModelSpec};
use proptest::prelude::*;

#[derive(Clone, Debug)]
pub enum FlowKind {
    Linear(f64),
    Decay(f64),
    Quadratic(f64, f64),
}

#[derive(Clone, Debug)]
pub struct ActionParams {
    pub rate: (f64, f64),
    pub cost: (f64, f64),
    pub boundary: f64,
    pub kernel: KernelKind,
}

#[derive(Clone, Debug)]
pub enum KernelKind {
    Point(f64),
    Uniform(f64, f64),
    Affine(f64, f64),
}

pub fn model_toml(flow: &FlowKind, actions: &[ActionParams]) -> String {
    let flow = match flow {
        FlowKind::Linear(v) => format!("family = \"linear_drift\"\nvelocity = {v:?}"),
        FlowKind::Decay(r) => format!("family = \"exponential_decay\"\ncenter = 0.0\nrate = {r:?}"),
        FlowKind::Quadratic(c0, c1) => {
            format!("family = \"polynomial_drift\"\ncoefficients = [{c0:?}, {c1:?}]")
        }
    };
    let mut s = format!(
        "name = \"random\"\n[domain]\nlower = 0.0\nupper = 1.0\n[flow]\n{flow}\n[xi]\nfamily = \"constant\"\nvalue = 0.0\n"
    );
    for (i, a) in actions.iter().enumerate() {
        let kernel = match a.kernel {
            KernelKind::Point(t) => format!("{{ family = \"point_mass\", target = {t:?} }}"),
            KernelKind::Uniform(t, u) => {
                format!("{{ family = \"uniform_atoms\", targets = [{t:?}, {u:?}] }}")
            }
            KernelKind::Affine(c, k) => {
                format!("{{ family = \"affine_point\", intercept = {c:?}, slope = {k:?} }}")
            }
        };
        s += &format!(
            "[actions.{i}]\nname = \"a{i}\"\n\
             rate = {{ family = \"affine\", intercept = {:?}, slope = {:?} }}\n\
             running_cost = {{ family = \"affine\", intercept = {:?}, slope = {:?} }}\n\
             boundary_cost = {{ family = \"constant\", value = {:?} }}\n\
             kernel = {kernel}\n",
            a.rate.0, a.rate.1, a.cost.0, a.cost.1, a.boundary
        );
    }
    s
}

fn kernel() -> impl Strategy<Value = KernelKind> {
    prop_oneof![
        (0.1..0.9f64).prop_map(KernelKind::Point),
        (0.1..0.9f64, 0.1..0.9f64).prop_map(|(t, u)| KernelKind::Uniform(t, u)),
        (0.1..0.3f64, 0.0..0.5f64).prop_map(|(c, k)| KernelKind::Affine(c, k)),
    ]
}

/// `min_rate` bounds the rate intercept from below.
fn action(min_rate: f64) -> impl Strategy<Value = ActionParams> {
    (min_rate..2.0f64, 0.0..1.0f64, 0.0..2.0f64, 0.0..1.0f64, 0.0..1.0f64, kernel()).prop_map(
        |(r0, r1, c0, c1, b, kernel)| ActionParams {
            rate: (r0, r1),
            cost: (c0, c1),
            boundary: b,
            kernel,
        },
    )
}

fn flow() -> impl Strategy<Value = FlowKind> {
    prop_oneof![
        (0.5..2.0f64).prop_map(FlowKind::Linear),
        (-2.0..-0.5f64).prop_map(FlowKind::Linear),
        (0.5..2.0f64).prop_map(FlowKind::Decay),
        (0.2..0.6f64, 0.0..1.0f64).prop_map(|(c0, c1)| FlowKind::Quadratic(c0, c1)),
    ]
}

/// A model with two or three always-feasible actions. Decay flows never
/// reach the boundary, so their rates are kept away from zero.
pub fn arb_model() -> impl Strategy<Value = ModelSpec> {
    flow()
        .prop_flat_map(|f| {
            let min_rate = if matches!(f, FlowKind::Decay(_)) { 0.5 } else { 0.0 };
            (Just(f), prop::collection::vec(action(min_rate), 2..=3))
        })
        .prop_map(|(f, acts)| ModelSpec::load(&model_toml(&f, &acts)).expect("valid model"))
}

/// A path with one switch at `t1`.
pub fn arb_path(n_actions: usize) -> impl Strategy<Value = ControlPath> {
    (0.01..1.0f64, 0..n_actions, 0..n_actions, 0..n_actions).prop_map(|(t1, a, b, z)| {
        ControlPath::new(vec![0.0, t1], vec![Action(a), Action(b)], Action(z)).expect("valid path")
    })
}

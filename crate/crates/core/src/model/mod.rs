//! PDMP control models: domain, flow, per-action rates, kernels and costs.
//!
//! Models are loaded from a TOML document. The schema is documented in the
//! book chapter on models; [`ModelSpec::to_canonical_toml`] emits the
//! canonical form, which reloads to an identical [`ModelSpec`].

mod family;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use family::{
    FamilyRef, Feasibility, FlowFamily, KernelAtom, KernelFamily, ScalarFamily, KERNEL_MASS_TOL,
};
pub use validate::{validate_assumptions, AssumptionCheck, ValidationReport};

use crate::error::{Error, Result};

/// Tolerance on the boundary predicate.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Interior,
    Boundary,
}

/// A point of the closed state space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatePoint {
    pub x: f64,
    pub location: Location,
}

impl StatePoint {
    pub fn interior(x: f64) -> Self {
        StatePoint {
            x,
            location: Location::Interior,
        }
    }

    pub fn boundary(z: f64) -> Self {
        StatePoint {
            x: z,
            location: Location::Boundary,
        }
    }

    pub fn is_boundary(&self) -> bool {
        self.location == Location::Boundary
    }
}

/// Index into the model's global action list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action(pub usize);

/// The open interval `(lower, upper)`; the boundary is `{lower, upper}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    pub lower: f64,
    pub upper: f64,
}

impl Domain {
    pub fn contains_interior(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    pub fn contains_closure(&self, x: f64) -> bool {
        x >= self.lower - BOUNDARY_TOL && x <= self.upper + BOUNDARY_TOL
    }

    /// Distance to the nearest boundary point; the boundary predicate.
    pub fn boundary_distance(&self, x: f64) -> f64 {
        (x - self.lower).abs().min((self.upper - x).abs())
    }

    pub fn classify(&self, x: f64) -> Option<StatePoint> {
        if self.boundary_distance(x) <= BOUNDARY_TOL {
            let z = if (x - self.lower).abs() <= (self.upper - x).abs() {
                self.lower
            } else {
                self.upper
            };
            Some(StatePoint::boundary(z))
        } else if self.contains_interior(x) {
            Some(StatePoint::interior(x))
        } else {
            None
        }
    }
}

/// Discretization and certification parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericParams {
    /// Step of the along-flow backward recursion.
    pub delta: f64,
    /// Step of the along-path quadrature.
    pub delta_quad: f64,
    /// Step of RK4-integrated flows.
    pub delta_flow: f64,
    /// Target bound on truncated infinite-horizon tails.
    pub eps_tail: f64,
    /// Horizon up to which an infinite hitting time is certified.
    pub t_cert: f64,
    /// Jump budget per simulated trajectory.
    pub max_jumps: usize,
}

impl Default for NumericParams {
    fn default() -> Self {
        NumericParams {
            delta: 1e-3,
            delta_quad: 1e-3,
            delta_flow: 1e-3,
            eps_tail: 1e-6,
            t_cert: 50.0,
            max_jumps: 1_000_000,
        }
    }
}

impl NumericParams {
    fn check(&self) -> Result<()> {
        let pos = [
            ("delta", self.delta),
            ("delta_quad", self.delta_quad),
            ("delta_flow", self.delta_flow),
            ("eps_tail", self.eps_tail),
            ("t_cert", self.t_cert),
        ];
        for (name, v) in pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::ParameterRange {
                    name: format!("solver.{name}"),
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        if self.max_jumps == 0 {
            return Err(Error::ParameterRange {
                name: "solver.max_jumps".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// One entry of the global action list.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpec {
    pub name: String,
    pub rate: ScalarFamily,
    pub running_cost: ScalarFamily,
    pub boundary_cost: ScalarFamily,
    pub kernel: KernelFamily,
    pub feasible: Feasibility,
}

/// A fully resolved PDMP control model. Immutable after loading.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub domain: Domain,
    pub flow: FlowFamily,
    pub actions: Vec<ActionSpec>,
    pub xi: ScalarFamily,
    pub params: NumericParams,
}

// ---- config document -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dimension: Option<i64>,
    domain: DomainDoc,
    flow: FamilyRef,
    actions: BTreeMap<String, ActionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<KernelDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    costs: Option<CostsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xi: Option<FamilyRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver: Option<NumericParams>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainDoc {
    lower: f64,
    upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    rate: FamilyRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    running_cost: Option<FamilyRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_cost: Option<FamilyRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<FamilyRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feasible: Option<FamilyRef>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelDoc {
    default: Option<FamilyRef>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostsDoc {
    running: Option<FamilyRef>,
    boundary: Option<FamilyRef>,
}

fn range_err(name: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::ParameterRange {
        name: name.into(),
        reason: reason.into(),
    }
}

impl ModelSpec {
    /// Parses and resolves a model config.
    pub fn load(config_text: &str) -> Result<ModelSpec> {
        let doc: ConfigDoc =
            toml::from_str(config_text).map_err(|e| Error::Parse(e.message().to_string()))?;
        Self::from_doc(doc)
    }

    pub fn load_file(path: impl AsRef<std::path::Path>) -> Result<ModelSpec> {
        let text = std::fs::read_to_string(path)?;
        Self::load(&text)
    }

    fn from_doc(doc: ConfigDoc) -> Result<ModelSpec> {
        if let Some(d) = doc.dimension {
            if d != 1 {
                return Err(range_err("dimension", "only one-dimensional models are supported"));
            }
        }
        let domain = Domain {
            lower: doc.domain.lower,
            upper: doc.domain.upper,
        };
        if !(domain.lower.is_finite() && domain.upper.is_finite() && domain.lower < domain.upper) {
            return Err(range_err("domain", "need finite lower < upper"));
        }
        if let Some(b) = &doc.domain.boundary {
            if b != "box" {
                return Err(Error::UnknownFamily {
                    kind: "boundary predicate",
                    id: b.clone(),
                });
            }
        }
        let flow = FlowFamily::parse(&doc.flow, "flow")?;
        if let FlowFamily::PolynomialDrift { coefficients } = &flow {
            // The hitting-time certificate needs a drift that is not
            // identically zero.
            if coefficients.iter().all(|c| *c == 0.0) {
                return Err(range_err("flow.coefficients", "drift identically zero"));
            }
        }

        let default_kernel = doc
            .kernel
            .as_ref()
            .and_then(|k| k.default.as_ref())
            .map(|r| KernelFamily::parse(r, "kernel.default"))
            .transpose()?;
        let default_running = doc
            .costs
            .as_ref()
            .and_then(|c| c.running.as_ref())
            .map(|r| ScalarFamily::parse(r, "costs.running"))
            .transpose()?;
        let default_boundary = doc
            .costs
            .as_ref()
            .and_then(|c| c.boundary.as_ref())
            .map(|r| ScalarFamily::parse(r, "costs.boundary"))
            .transpose()?;

        let mut indexed = Vec::with_capacity(doc.actions.len());
        for (key, a) in doc.actions {
            let idx: usize = key
                .parse()
                .map_err(|_| Error::Parse(format!("action key `{key}` is not an index")))?;
            indexed.push((idx, a));
        }
        indexed.sort_by_key(|(i, _)| *i);
        if indexed.is_empty() {
            return Err(range_err("actions", "at least one action required"));
        }
        let mut actions = Vec::with_capacity(indexed.len());
        for (pos, (idx, a)) in indexed.into_iter().enumerate() {
            if idx != pos {
                return Err(range_err("actions", "indices must be 0, 1, ..., n-1"));
            }
            let ctx = format!("actions.{idx}");
            let rate = ScalarFamily::parse(&a.rate, &format!("{ctx}.rate"))?;
            let running_cost = match &a.running_cost {
                Some(r) => ScalarFamily::parse(r, &format!("{ctx}.running_cost"))?,
                None => default_running
                    .clone()
                    .ok_or_else(|| Error::Parse(format!("{ctx}: no running cost")))?,
            };
            let boundary_cost = match &a.boundary_cost {
                Some(r) => ScalarFamily::parse(r, &format!("{ctx}.boundary_cost"))?,
                None => default_boundary
                    .clone()
                    .unwrap_or(ScalarFamily::Constant { value: 0.0 }),
            };
            let kernel = match &a.kernel {
                Some(r) => KernelFamily::parse(r, &format!("{ctx}.kernel"))?,
                None => default_kernel
                    .clone()
                    .ok_or_else(|| Error::Parse(format!("{ctx}: no kernel")))?,
            };
            let feasible = match &a.feasible {
                Some(r) => Feasibility::parse(r, &format!("{ctx}.feasible"))?,
                None => Feasibility::Always,
            };
            actions.push(ActionSpec {
                name: a.name.unwrap_or_else(|| format!("a{idx}")),
                rate,
                running_cost,
                boundary_cost,
                kernel,
                feasible,
            });
        }

        let xi = match &doc.xi {
            Some(r) => ScalarFamily::parse(r, "xi")?,
            None => ScalarFamily::Constant { value: 0.0 },
        };
        let params = doc.solver.unwrap_or_default();
        params.check()?;

        let m = ModelSpec {
            name: doc.name.unwrap_or_else(|| "model".to_string()),
            domain,
            flow,
            actions,
            xi,
            params,
        };
        m.check_ranges()?;
        Ok(m)
    }

    /// Sign and support constraints that can be decided exactly on the
    /// closed domain.
    fn check_ranges(&self) -> Result<()> {
        let (lo, hi) = (self.domain.lower, self.domain.upper);
        for (i, a) in self.actions.iter().enumerate() {
            if a.rate.min_on(lo, hi) < 0.0 {
                return Err(range_err(format!("actions.{i}.rate"), "rate must be nonnegative"));
            }
            if a.running_cost.min_on(lo, hi) < 0.0 {
                return Err(range_err(
                    format!("actions.{i}.running_cost"),
                    "running cost must be nonnegative",
                ));
            }
            if a.boundary_cost.eval(lo) < 0.0 || a.boundary_cost.eval(hi) < 0.0 {
                return Err(range_err(
                    format!("actions.{i}.boundary_cost"),
                    "boundary cost must be nonnegative",
                ));
            }
            let (tmin, tmax) = a.kernel.target_range(lo, hi);
            if !(tmin > lo && tmax < hi) {
                return Err(range_err(
                    format!("actions.{i}.kernel"),
                    format!("atoms must lie in the open domain, got [{tmin}, {tmax}]"),
                ));
            }
        }
        if self.xi.min_on(lo, hi) < 0.0 {
            return Err(range_err("xi", "rate floor must be nonnegative"));
        }
        for x in [lo, hi] {
            if self.feasible_indices(x).next().is_none() {
                return Err(range_err("actions", format!("no feasible action at x = {x}")));
            }
        }
        Ok(())
    }

    /// Canonical serialization: every action fully resolved, all solver
    /// parameters explicit.
    pub fn to_canonical_toml(&self) -> String {
        let actions = self
            .actions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                (
                    i.to_string(),
                    ActionDoc {
                        name: Some(a.name.clone()),
                        rate: a.rate.to_ref(),
                        running_cost: Some(a.running_cost.to_ref()),
                        boundary_cost: Some(a.boundary_cost.to_ref()),
                        kernel: Some(a.kernel.to_ref()),
                        feasible: Some(a.feasible.to_ref()),
                    },
                )
            })
            .collect();
        let doc = ConfigDoc {
            name: Some(self.name.clone()),
            dimension: Some(1),
            domain: DomainDoc {
                lower: self.domain.lower,
                upper: self.domain.upper,
                boundary: Some("box".into()),
            },
            flow: self.flow.to_ref(),
            actions,
            kernel: None,
            costs: None,
            xi: Some(self.xi.to_ref()),
            solver: Some(self.params),
        };
        toml::to_string(&doc).expect("model documents always serialize")
    }

    /// The same model with the action list restricted to `keep`
    /// (re-indexed in the given order).
    pub fn restrict_actions(&self, keep: &[usize]) -> Result<ModelSpec> {
        let mut m = self.clone();
        m.actions = keep
            .iter()
            .map(|&i| {
                self.actions
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no action {i}")))
            })
            .collect::<Result<_>>()?;
        if m.actions.is_empty() {
            return Err(Error::InvalidArgument("empty action list".into()));
        }
        m.check_ranges()?;
        Ok(m)
    }

    pub fn with_params(mut self, params: NumericParams) -> Result<ModelSpec> {
        params.check()?;
        self.params = params;
        Ok(self)
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub(crate) fn feasible_indices(&self, x: f64) -> impl Iterator<Item = usize> + '_ {
        self.actions
            .iter()
            .enumerate()
            .filter(move |(_, a)| a.feasible.allows(x))
            .map(|(i, _)| i)
    }

    fn check_closure(&self, x: f64) -> Result<()> {
        if x.is_finite() && self.domain.contains_closure(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain {
                x,
                lower: self.domain.lower,
                upper: self.domain.upper,
            })
        }
    }

    fn action_at(&self, x: f64, a: Action) -> Result<&ActionSpec> {
        self.check_closure(x)?;
        match self.actions.get(a.0) {
            Some(spec) if spec.feasible.allows(x) => Ok(spec),
            _ => Err(Error::Infeasible { action: a.0, x }),
        }
    }

    /// Feasible actions at `x`, ascending by index.
    pub fn feasible_actions(&self, x: f64) -> Result<Vec<Action>> {
        self.check_closure(x)?;
        let v: Vec<Action> = self.feasible_indices(x).map(Action).collect();
        if v.is_empty() {
            return Err(Error::InvalidArgument(format!("no feasible action at x = {x}")));
        }
        Ok(v)
    }

    pub fn eval_rate(&self, x: f64, a: Action) -> Result<f64> {
        finite("rate", x, self.action_at(x, a)?.rate.eval(x))
    }

    pub fn eval_running_cost(&self, x: f64, a: Action) -> Result<f64> {
        finite("running cost", x, self.action_at(x, a)?.running_cost.eval(x))
    }

    pub fn eval_boundary_cost(&self, z: f64, a: Action) -> Result<f64> {
        finite("boundary cost", z, self.action_at(z, a)?.boundary_cost.eval(z))
    }

    pub fn kernel(&self, x: f64, a: Action) -> Result<Vec<KernelAtom>> {
        let atoms = self.action_at(x, a)?.kernel.atoms(x);
        for atom in &atoms {
            finite("kernel atom", x, atom.target)?;
        }
        Ok(atoms)
    }

    pub fn eval_xi(&self, x: f64) -> f64 {
        self.xi.eval(x)
    }
}

fn finite(what: &'static str, x: f64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what, x })
    }
}

//! The closed registry of model families.
//!
//! Every function of the model (flow, rates, costs, kernels, feasibility
//! rules and the rate floor) is picked from this registry by id and
//! parameterized from the config. There is no expression language.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{Error, Result};

/// Raw `{ family = "...", <params> }` table as it appears in a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRef {
    pub family: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, Value>,
}

impl FamilyRef {
    fn new(family: &str) -> Self {
        FamilyRef {
            family: family.to_string(),
            params: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn with_num(self, key: &str, value: f64) -> Self {
        self.with(key, Value::Float(value))
    }

    fn with_nums(self, key: &str, values: &[f64]) -> Self {
        self.with(
            key,
            Value::Array(values.iter().map(|v| Value::Float(*v)).collect()),
        )
    }

    fn expect_keys(&self, ctx: &str, keys: &[&str]) -> Result<()> {
        for k in self.params.keys() {
            if !keys.contains(&k.as_str()) {
                return Err(Error::Parse(format!(
                    "{ctx}: unexpected parameter `{k}` for family `{}`",
                    self.family
                )));
            }
        }
        Ok(())
    }

    fn num(&self, ctx: &str, key: &str) -> Result<f64> {
        let v = self.params.get(key).ok_or_else(|| {
            Error::Parse(format!(
                "{ctx}: family `{}` requires parameter `{key}`",
                self.family
            ))
        })?;
        let x = as_f64(v).ok_or_else(|| {
            Error::Parse(format!("{ctx}: parameter `{key}` must be a number"))
        })?;
        if !x.is_finite() {
            return Err(Error::ParameterRange {
                name: format!("{ctx}.{key}"),
                reason: "must be finite".into(),
            });
        }
        Ok(x)
    }

    fn nums(&self, ctx: &str, key: &str) -> Result<Vec<f64>> {
        let v = self.params.get(key).ok_or_else(|| {
            Error::Parse(format!(
                "{ctx}: family `{}` requires parameter `{key}`",
                self.family
            ))
        })?;
        let arr = v
            .as_array()
            .ok_or_else(|| Error::Parse(format!("{ctx}: parameter `{key}` must be an array")))?;
        arr.iter()
            .map(|e| {
                let x = as_f64(e).ok_or_else(|| {
                    Error::Parse(format!("{ctx}: entries of `{key}` must be numbers"))
                })?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::ParameterRange {
                        name: format!("{ctx}.{key}"),
                        reason: "entries must be finite".into(),
                    })
                }
            })
            .collect()
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Scalar state functions: jump rates, running and boundary costs, the
/// rate floor.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarFamily {
    Constant { value: f64 },
    /// `intercept + slope * x`
    Affine { intercept: f64, slope: f64 },
}

impl ScalarFamily {
    pub fn parse(r: &FamilyRef, ctx: &str) -> Result<Self> {
        match r.family.as_str() {
            "constant" => {
                r.expect_keys(ctx, &["value"])?;
                Ok(ScalarFamily::Constant {
                    value: r.num(ctx, "value")?,
                })
            }
            "affine" => {
                r.expect_keys(ctx, &["intercept", "slope"])?;
                Ok(ScalarFamily::Affine {
                    intercept: r.num(ctx, "intercept")?,
                    slope: r.num(ctx, "slope")?,
                })
            }
            other => Err(Error::UnknownFamily {
                kind: "scalar",
                id: other.to_string(),
            }),
        }
    }

    pub fn to_ref(&self) -> FamilyRef {
        match self {
            ScalarFamily::Constant { value } => FamilyRef::new("constant").with_num("value", *value),
            ScalarFamily::Affine { intercept, slope } => FamilyRef::new("affine")
                .with_num("intercept", *intercept)
                .with_num("slope", *slope),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ScalarFamily::Constant { value } => value,
            ScalarFamily::Affine { intercept, slope } => intercept + slope * x,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ScalarFamily::Constant { .. })
    }

    /// Exact minimum over `[lo, hi]`.
    pub fn min_on(&self, lo: f64, hi: f64) -> f64 {
        self.eval(lo).min(self.eval(hi))
    }

    /// Exact maximum over `[lo, hi]`.
    pub fn max_on(&self, lo: f64, hi: f64) -> f64 {
        self.eval(lo).max(self.eval(hi))
    }
}

/// A post-jump location with its probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelAtom {
    pub target: f64,
    pub weight: f64,
}

/// Finite-support transition kernels.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelFamily {
    PointMass { target: f64 },
    UniformAtoms { targets: Vec<f64> },
    WeightedAtoms { targets: Vec<f64>, weights: Vec<f64> },
    /// Point mass at `intercept + slope * x`; state-dependent.
    AffinePoint { intercept: f64, slope: f64 },
}

pub const KERNEL_MASS_TOL: f64 = 1e-12;

impl KernelFamily {
    pub fn parse(r: &FamilyRef, ctx: &str) -> Result<Self> {
        let k = match r.family.as_str() {
            "point_mass" => {
                r.expect_keys(ctx, &["target"])?;
                KernelFamily::PointMass {
                    target: r.num(ctx, "target")?,
                }
            }
            "uniform_atoms" => {
                r.expect_keys(ctx, &["targets"])?;
                let targets = r.nums(ctx, "targets")?;
                if targets.is_empty() {
                    return Err(Error::ParameterRange {
                        name: format!("{ctx}.targets"),
                        reason: "at least one atom required".into(),
                    });
                }
                KernelFamily::UniformAtoms { targets }
            }
            "weighted_atoms" => {
                r.expect_keys(ctx, &["targets", "weights"])?;
                let targets = r.nums(ctx, "targets")?;
                let weights = r.nums(ctx, "weights")?;
                if targets.is_empty() || targets.len() != weights.len() {
                    return Err(Error::ParameterRange {
                        name: format!("{ctx}.weights"),
                        reason: "one weight per target, at least one atom".into(),
                    });
                }
                if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && **w <= 1.0)) {
                    return Err(Error::ParameterRange {
                        name: format!("{ctx}.weights"),
                        reason: format!("weight {w} not in (0, 1]"),
                    });
                }
                let mass: f64 = weights.iter().sum();
                if (mass - 1.0).abs() > KERNEL_MASS_TOL {
                    return Err(Error::KernelMass { mass });
                }
                KernelFamily::WeightedAtoms { targets, weights }
            }
            "affine_point" => {
                r.expect_keys(ctx, &["intercept", "slope"])?;
                KernelFamily::AffinePoint {
                    intercept: r.num(ctx, "intercept")?,
                    slope: r.num(ctx, "slope")?,
                }
            }
            other => {
                return Err(Error::UnknownFamily {
                    kind: "kernel",
                    id: other.to_string(),
                })
            }
        };
        Ok(k)
    }

    pub fn to_ref(&self) -> FamilyRef {
        match self {
            KernelFamily::PointMass { target } => {
                FamilyRef::new("point_mass").with_num("target", *target)
            }
            KernelFamily::UniformAtoms { targets } => {
                FamilyRef::new("uniform_atoms").with_nums("targets", targets)
            }
            KernelFamily::WeightedAtoms { targets, weights } => FamilyRef::new("weighted_atoms")
                .with_nums("targets", targets)
                .with_nums("weights", weights),
            KernelFamily::AffinePoint { intercept, slope } => FamilyRef::new("affine_point")
                .with_num("intercept", *intercept)
                .with_num("slope", *slope),
        }
    }

    pub fn is_state_independent(&self) -> bool {
        !matches!(self, KernelFamily::AffinePoint { .. })
    }

    /// Atoms in declaration order.
    pub fn atoms(&self, x: f64) -> Vec<KernelAtom> {
        match self {
            KernelFamily::PointMass { target } => vec![KernelAtom {
                target: *target,
                weight: 1.0,
            }],
            KernelFamily::UniformAtoms { targets } => {
                let w = 1.0 / targets.len() as f64;
                targets
                    .iter()
                    .map(|&target| KernelAtom { target, weight: w })
                    .collect()
            }
            KernelFamily::WeightedAtoms { targets, weights } => targets
                .iter()
                .zip(weights)
                .map(|(&target, &weight)| KernelAtom { target, weight })
                .collect(),
            KernelFamily::AffinePoint { intercept, slope } => vec![KernelAtom {
                target: intercept + slope * x,
                weight: 1.0,
            }],
        }
    }

    /// Smallest and largest atom location reachable from `[lo, hi]`.
    pub fn target_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        let ts: Vec<f64> = match self {
            KernelFamily::PointMass { target } => vec![*target],
            KernelFamily::UniformAtoms { targets } => targets.clone(),
            KernelFamily::WeightedAtoms { targets, .. } => targets.clone(),
            KernelFamily::AffinePoint { intercept, slope } => {
                vec![intercept + slope * lo, intercept + slope * hi]
            }
        };
        let min = ts.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }
}

/// State-dependent feasibility of an action.
#[derive(Clone, Debug, PartialEq)]
pub enum Feasibility {
    Always,
    /// Feasible where `x < threshold`.
    Below { threshold: f64 },
    /// Feasible where `x > threshold`.
    Above { threshold: f64 },
}

impl Feasibility {
    pub fn parse(r: &FamilyRef, ctx: &str) -> Result<Self> {
        match r.family.as_str() {
            "always" => {
                r.expect_keys(ctx, &[])?;
                Ok(Feasibility::Always)
            }
            "below" => {
                r.expect_keys(ctx, &["threshold"])?;
                Ok(Feasibility::Below {
                    threshold: r.num(ctx, "threshold")?,
                })
            }
            "above" => {
                r.expect_keys(ctx, &["threshold"])?;
                Ok(Feasibility::Above {
                    threshold: r.num(ctx, "threshold")?,
                })
            }
            other => Err(Error::UnknownFamily {
                kind: "feasibility",
                id: other.to_string(),
            }),
        }
    }

    pub fn to_ref(&self) -> FamilyRef {
        match self {
            Feasibility::Always => FamilyRef::new("always"),
            Feasibility::Below { threshold } => {
                FamilyRef::new("below").with_num("threshold", *threshold)
            }
            Feasibility::Above { threshold } => {
                FamilyRef::new("above").with_num("threshold", *threshold)
            }
        }
    }

    #[inline]
    pub fn allows(&self, x: f64) -> bool {
        match *self {
            Feasibility::Always => true,
            Feasibility::Below { threshold } => x < threshold,
            Feasibility::Above { threshold } => x > threshold,
        }
    }
}

/// Deterministic flows on an interval.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowFamily {
    /// `x + velocity * t`
    LinearDrift { velocity: f64 },
    /// `center + (x - center) * exp(-rate * t)`
    ExponentialDecay { center: f64, rate: f64 },
    /// `dx/dt = c0 + c1 x + c2 x^2`, integrated with fixed-step RK4.
    PolynomialDrift { coefficients: Vec<f64> },
}

impl FlowFamily {
    pub fn parse(r: &FamilyRef, ctx: &str) -> Result<Self> {
        match r.family.as_str() {
            "linear_drift" => {
                r.expect_keys(ctx, &["velocity"])?;
                Ok(FlowFamily::LinearDrift {
                    velocity: r.num(ctx, "velocity")?,
                })
            }
            "exponential_decay" => {
                r.expect_keys(ctx, &["center", "rate"])?;
                Ok(FlowFamily::ExponentialDecay {
                    center: r.num(ctx, "center")?,
                    rate: r.num(ctx, "rate")?,
                })
            }
            "polynomial_drift" => {
                r.expect_keys(ctx, &["coefficients"])?;
                let coefficients = r.nums(ctx, "coefficients")?;
                if coefficients.is_empty() || coefficients.len() > 3 {
                    return Err(Error::ParameterRange {
                        name: format!("{ctx}.coefficients"),
                        reason: "between 1 and 3 coefficients (degree at most 2)".into(),
                    });
                }
                Ok(FlowFamily::PolynomialDrift { coefficients })
            }
            other => Err(Error::UnknownFamily {
                kind: "flow",
                id: other.to_string(),
            }),
        }
    }

    pub fn to_ref(&self) -> FamilyRef {
        match self {
            FlowFamily::LinearDrift { velocity } => {
                FamilyRef::new("linear_drift").with_num("velocity", *velocity)
            }
            FlowFamily::ExponentialDecay { center, rate } => FamilyRef::new("exponential_decay")
                .with_num("center", *center)
                .with_num("rate", *rate),
            FlowFamily::PolynomialDrift { coefficients } => {
                FamilyRef::new("polynomial_drift").with_nums("coefficients", coefficients)
            }
        }
    }

    /// `dx/dt` at `x`.
    #[inline]
    pub fn velocity(&self, x: f64) -> f64 {
        match self {
            FlowFamily::LinearDrift { velocity } => *velocity,
            FlowFamily::ExponentialDecay { center, rate } => -rate * (x - center),
            FlowFamily::PolynomialDrift { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, FlowFamily::PolynomialDrift { .. })
    }
}

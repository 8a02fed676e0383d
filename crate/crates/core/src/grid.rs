//! State grids and piecewise-linear value fields.

use crate::error::{Error, Result};
use crate::model::Domain;

/// Strictly increasing interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
}

/// Linear interpolation weights: `(1 - theta) * v[index] + theta * v[index + 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub index: usize,
    pub theta: f64,
}

impl Stencil {
    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        if self.theta == 0.0 {
            values[self.index]
        } else {
            (1.0 - self.theta) * values[self.index] + self.theta * values[self.index + 1]
        }
    }
}

impl Grid {
    pub fn new(nodes: Vec<f64>) -> Result<Grid> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("grid must be non-empty".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "grid nodes must be finite and strictly increasing".into(),
            ));
        }
        Ok(Grid { nodes })
    }

    /// `n` equally spaced interior nodes `lower + i (upper - lower) / (n + 1)`.
    pub fn uniform(domain: &Domain, n: usize) -> Result<Grid> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid size must be positive".into()));
        }
        let h = (domain.upper - domain.lower) / (n + 1) as f64;
        Grid::new((1..=n).map(|i| domain.lower + i as f64 * h).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn hull(&self) -> (f64, f64) {
        (self.nodes[0], self.nodes[self.nodes.len() - 1])
    }

    /// Index of the middle node.
    pub fn midpoint_index(&self) -> usize {
        (self.nodes.len() - 1) / 2
    }

    /// Nearest node; ties go to the lower index.
    pub fn nearest(&self, x: f64) -> usize {
        let i = self.nodes.partition_point(|&n| n < x);
        if i == 0 {
            0
        } else if i == self.nodes.len() || x - self.nodes[i - 1] <= self.nodes[i] - x {
            i - 1
        } else {
            i
        }
    }

    /// Interpolation stencil for a point of the node hull.
    pub fn stencil(&self, x: f64) -> Result<Stencil> {
        let (lo, hi) = self.hull();
        if !(x >= lo && x <= hi) {
            return Err(Error::OutsideGridHull {
                x,
                lower: lo,
                upper: hi,
            });
        }
        Ok(self.stencil_unchecked(x))
    }

    /// Stencil with the point clamped into the hull.
    pub fn stencil_clamped(&self, x: f64) -> Stencil {
        let (lo, hi) = self.hull();
        self.stencil_unchecked(x.clamp(lo, hi))
    }

    fn stencil_unchecked(&self, x: f64) -> Stencil {
        let n = self.nodes.len();
        if n == 1 {
            return Stencil {
                index: 0,
                theta: 0.0,
            };
        }
        let i = self.nodes.partition_point(|&node| node <= x);
        let index = i.saturating_sub(1).min(n - 2);
        let (a, b) = (self.nodes[index], self.nodes[index + 1]);
        let theta = ((x - a) / (b - a)).clamp(0.0, 1.0);
        Stencil { index, theta }
    }
}

/// A real function on the grid, with values at reachable boundary points.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// `(z, value)` for boundary points reached by the flow from some node.
    pub boundary_values: Vec<(f64, f64)>,
}

impl ValueField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<ValueField> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} grid nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "value field",
                x: grid.nodes()[i],
            });
        }
        Ok(ValueField {
            grid,
            values,
            boundary_values: Vec::new(),
        })
    }

    pub fn constant(grid: &Grid, c: f64) -> ValueField {
        ValueField {
            grid: grid.clone(),
            values: vec![c; grid.len()],
            boundary_values: Vec::new(),
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> ValueField {
        ValueField {
            grid: grid.clone(),
            values: grid.nodes().iter().map(|&x| f(x)).collect(),
            boundary_values: Vec::new(),
        }
    }

    /// Piecewise-linear interpolation; errors outside the node hull.
    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.grid.stencil(x)?.apply(&self.values))
    }

    pub fn eval_clamped(&self, x: f64) -> f64 {
        self.grid.stencil_clamped(x).apply(&self.values)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Pointwise `self - other` on the interior nodes.
    pub fn sub(&self, other: &ValueField) -> Result<ValueField> {
        if self.grid != other.grid {
            return Err(Error::InvalidArgument("value fields on different grids".into()));
        }
        Ok(ValueField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
            boundary_values: Vec::new(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ValueField {
        ValueField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            boundary_values: self.boundary_values.iter().map(|&(z, v)| (z, f(v))).collect(),
        }
    }

    /// `sup |self - other|` over interior nodes.
    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

//! Uniform time grids and functions sampled on them.

use crate::error::{invalid, Result};

/// Uniform grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    step: f64,
}

impl TimeGrid {
    /// Grid on `[0, t_end]` with `n_cells` equal cells.
    pub fn uniform(t_end: f64, n_cells: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(invalid("t_end", format!("must be positive, got {t_end}")));
        }
        if n_cells == 0 {
            return Err(invalid("n_cells", "must be at least 1"));
        }
        let step = t_end / n_cells as f64;
        let nodes = (0..=n_cells)
            .map(|i| t_end * i as f64 / n_cells as f64)
            .collect();
        Ok(Self { nodes, step })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of cells `N`; the grid has `N + 1` nodes.
    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Index of the node closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let i = (t / self.step).round();
        (i.max(0.0) as usize).min(self.n_cells())
    }
}

/// Real values attached to the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(
                "values",
                format!("expected {} values, got {}", grid.len(), values.len()),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&t| f(t)).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &TimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| f(t, v))
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Maximum absolute value over all nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Central finite-difference derivative, second order everywhere.
    pub fn derivative(&self) -> Self {
        let h = self.grid.step();
        let v = &self.values;
        let n = v.len();
        let mut out = vec![0.0; n];
        if n == 2 {
            out[0] = (v[1] - v[0]) / h;
            out[1] = out[0];
        } else if n > 2 {
            out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
            out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
            for i in 1..n - 1 {
                out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
            }
        }
        Self {
            grid: self.grid.clone(),
            values: out,
        }
    }
}

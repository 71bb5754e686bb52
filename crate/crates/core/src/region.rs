//! Axis-aligned boxes and the sampling grids used in place of "for all t, z".

use serde::{Deserialize, Serialize};

use crate::quadrature::linspace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    /// Returns `None` when the bounds disagree in length, are empty or are inverted.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Option<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return None;
        }
        Some(Self { lower, upper })
    }

    /// Symmetric interval `[-half_width, half_width]`.
    pub fn interval(half_width: f64) -> Self {
        Self {
            lower: vec![-half_width],
            upper: vec![half_width],
        }
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= l - slack && *v <= u + slack)
    }

    /// Tensor grid with `per_axis` points on each axis, corners included.
    pub fn grid_points(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                if per_axis <= 1 || l == u {
                    vec![0.5 * (l + u)]
                } else {
                    linspace(l, u, per_axis - 1)
                }
            })
            .collect();
        let total: usize = axes.iter().map(Vec::len).product();
        (0..total)
            .map(|mut idx| {
                axes.iter()
                    .map(|axis| {
                        let v = axis[idx % axis.len()];
                        idx /= axis.len();
                        v
                    })
                    .collect()
            })
            .collect()
    }
}

/// Sampling resolution of a grid-checked inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Samples per period, `t_i = i T / n` for `i < n`.
    pub time_samples: usize,
    /// Samples per box axis, endpoints included.
    pub axis_samples: usize,
    /// Allowed excess of the sampled quantity over its bound.
    pub slack: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            time_samples: 256,
            axis_samples: 32,
            slack: 0.0,
        }
    }
}

impl GridSpec {
    pub fn new(time_samples: usize, axis_samples: usize) -> Self {
        Self {
            time_samples,
            axis_samples,
            slack: 0.0,
        }
    }

    pub fn times(&self, period: f64) -> Vec<f64> {
        let n = self.time_samples.max(1);
        (0..n).map(|i| period * i as f64 / n as f64).collect()
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{HflowError, Result};

/// Minimum number of nodes per axis accepted by a chart.
pub const MIN_RESOLUTION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartKind {
    /// Flat torus: equispaced nodes, no duplicated endpoint, spectral derivatives.
    PeriodicBox,
    /// Closed box: both endpoints are nodes, fourth-order finite differences.
    OpenBox,
}

/// A single coordinate patch discretized as a tensor-product grid.
///
/// Nodes are numbered in row-major order with axis 0 varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    kind: ChartKind,
    resolution: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Chart {
    pub fn new(kind: ChartKind, resolution: Vec<usize>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = resolution.len();
        if n == 0 {
            return Err(HflowError::Config("chart dimension must be positive".into()));
        }
        if lower.len() != n || upper.len() != n {
            return Err(HflowError::Config(format!(
                "chart bounds have {} / {} entries for dimension {n}",
                lower.len(),
                upper.len()
            )));
        }
        for (axis, &res) in resolution.iter().enumerate() {
            if res < MIN_RESOLUTION {
                return Err(HflowError::Config(format!(
                    "resolution {res} on axis {axis} is below the minimum {MIN_RESOLUTION}"
                )));
            }
            if !(upper[axis] > lower[axis]) || !lower[axis].is_finite() || !upper[axis].is_finite() {
                return Err(HflowError::Config(format!(
                    "axis {axis} has an empty or non-finite extent [{}, {}]",
                    lower[axis], upper[axis]
                )));
            }
        }
        Ok(Self {
            kind,
            resolution,
            lower,
            upper,
        })
    }

    /// Periodic box `[0, L)^n` with the same resolution on every axis.
    pub fn periodic(dim: usize, resolution: usize, length: f64) -> Result<Self> {
        Self::new(ChartKind::PeriodicBox, vec![resolution; dim], vec![0.0; dim], vec![length; dim])
    }

    /// Closed box `[lo, hi]^n` with the same resolution on every axis.
    pub fn open_box(dim: usize, resolution: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(ChartKind::OpenBox, vec![resolution; dim], vec![lo; dim], vec![hi; dim])
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.resolution.len()
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn num_nodes(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Node spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        let res = self.resolution[axis] as f64;
        match self.kind {
            ChartKind::PeriodicBox => self.extent(axis) / res,
            ChartKind::OpenBox => self.extent(axis) / (res - 1.0),
        }
    }

    /// Distance between consecutive nodes along `axis` in flat node numbering.
    pub fn stride(&self, axis: usize) -> usize {
        self.resolution[axis + 1..].iter().product()
    }

    pub fn multi_index(&self, mut node: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = node % self.resolution[axis];
            node /= self.resolution[axis];
        }
        idx
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.resolution)
            .fold(0, |acc, (&i, &res)| acc * res + i)
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing(axis)
    }

    pub fn coordinates(&self, node: usize) -> Vec<f64> {
        self.multi_index(node)
            .into_iter()
            .enumerate()
            .map(|(axis, i)| self.coordinate(axis, i))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self.kind {
            ChartKind::PeriodicBox => x.iter().all(|v| v.is_finite()),
            ChartKind::OpenBox => x
                .iter()
                .enumerate()
                .all(|(a, &v)| v >= self.lower[a] - 1e-12 && v <= self.upper[a] + 1e-12),
        }
    }

    /// Smallest nodes-per-axis count needed by the differentiation scheme.
    pub fn stencil_width(&self) -> usize {
        match self.kind {
            ChartKind::PeriodicBox => 2,
            ChartKind::OpenBox => 5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_coarse_resolution() {
        assert!(Chart::periodic(2, 4, 1.0).is_err());
        assert!(Chart::open_box(3, 7, -1.0, 1.0).is_err());
        assert!(Chart::open_box(3, 8, -1.0, 1.0).is_ok());
    }

    #[test]
    fn periodic_nodes_skip_endpoint() {
        let c = Chart::periodic(1, 8, 2.0).unwrap();
        assert_eq!(c.coordinate(0, 0), 0.0);
        assert!((c.coordinate(0, 7) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn open_box_nodes_include_both_ends() {
        let c = Chart::open_box(1, 9, -1.0, 1.0).unwrap();
        assert_eq!(c.coordinate(0, 0), -1.0);
        assert!((c.coordinate(0, 8) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn node_numbering_round_trips() {
        let c = Chart::new(ChartKind::OpenBox, vec![8, 9, 10], vec![0.0; 3], vec![1.0; 3]).unwrap();
        for node in [0, 1, 17, 300, c.num_nodes() - 1] {
            assert_eq!(c.node_index(&c.multi_index(node)), node);
        }
        assert_eq!(c.stride(0), 90);
        assert_eq!(c.stride(2), 1);
    }
}

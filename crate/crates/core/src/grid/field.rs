use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chart::Chart;
use crate::error::{HflowError, Result};

/// Variance and kind of a single tensor index.
///
/// Coordinate indices transform under chart changes; ℝⁿ indices are anchored at
/// the base point and are inert under covariant differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexTag {
    CoordUp,
    CoordDown,
    RnUp,
    RnDown,
}

impl IndexTag {
    pub fn is_coordinate(self) -> bool {
        matches!(self, IndexTag::CoordUp | IndexTag::CoordDown)
    }

    pub fn is_upper(self) -> bool {
        matches!(self, IndexTag::CoordUp | IndexTag::RnUp)
    }

    /// Whether a contraction between `self` and `other` is legal.
    pub fn pairs_with(self, other: IndexTag) -> bool {
        matches!(
            (self, other),
            (IndexTag::CoordUp, IndexTag::CoordDown)
                | (IndexTag::CoordDown, IndexTag::CoordUp)
                | (IndexTag::RnUp, IndexTag::RnDown)
                | (IndexTag::RnDown, IndexTag::RnUp)
        )
    }
}

impl fmt::Display for IndexTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IndexTag::CoordUp => "coord-up",
            IndexTag::CoordDown => "coord-down",
            IndexTag::RnUp => "rn-up",
            IndexTag::RnDown => "rn-down",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Sup,
    L2,
}

/// Multi-index field on a chart.
///
/// Storage is point-major; within a node the components are laid out row-major
/// over the multi-index, in the order given by the signature.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    chart: Arc<Chart>,
    signature: Vec<IndexTag>,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(chart: Arc<Chart>, signature: Vec<IndexTag>) -> Self {
        let len = chart.num_nodes() * chart.dim().pow(signature.len() as u32);
        Self {
            chart,
            signature,
            data: vec![0.0; len],
        }
    }

    pub fn from_data(chart: Arc<Chart>, signature: Vec<IndexTag>, data: Vec<f64>) -> Result<Self> {
        let expected = chart.num_nodes() * chart.dim().pow(signature.len() as u32);
        if data.len() != expected {
            return Err(HflowError::ShapeMismatch(format!(
                "payload has {} values, signature of rank {} on {} nodes needs {expected}",
                data.len(),
                signature.len(),
                chart.num_nodes()
            )));
        }
        Ok(Self {
            chart,
            signature,
            data,
        })
    }

    /// Builds a field by evaluating `f(node, coordinates, out)` at every node in parallel.
    pub fn from_node_fn<F>(chart: Arc<Chart>, signature: Vec<IndexTag>, f: F) -> Self
    where
        F: Fn(usize, &[f64], &mut [f64]) + Sync,
    {
        let mut field = Self::zeros(chart, signature);
        let comps = field.components();
        let chart = field.chart.clone();
        field
            .data
            .par_chunks_mut(comps)
            .enumerate()
            .for_each(|(node, out)| f(node, &chart.coordinates(node), out));
        field
    }

    /// Fallible variant of [`from_node_fn`](Self::from_node_fn); the first error in node order wins.
    pub fn try_from_node_fn<F>(chart: Arc<Chart>, signature: Vec<IndexTag>, f: F) -> Result<Self>
    where
        F: Fn(usize, &[f64], &mut [f64]) -> Result<()> + Sync,
    {
        let mut field = Self::zeros(chart, signature);
        let comps = field.components();
        let chart = field.chart.clone();
        let errors: Vec<(usize, HflowError)> = field
            .data
            .par_chunks_mut(comps)
            .enumerate()
            .filter_map(|(node, out)| f(node, &chart.coordinates(node), out).err().map(|e| (node, e)))
            .collect();
        match errors.into_iter().min_by_key(|(node, _)| *node) {
            Some((_, e)) => Err(e),
            None => Ok(field),
        }
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn signature(&self) -> &[IndexTag] {
        &self.signature
    }

    pub fn rank(&self) -> usize {
        self.signature.len()
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.chart.num_nodes()
    }

    /// Components per node, `n^rank`.
    pub fn components(&self) -> usize {
        self.dim().pow(self.rank() as u32)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn node(&self, node: usize) -> &[f64] {
        let c = self.components();
        &self.data[node * c..(node + 1) * c]
    }

    pub fn node_mut(&mut self, node: usize) -> &mut [f64] {
        let c = self.components();
        &mut self.data[node * c..(node + 1) * c]
    }

    /// Value of the component with multi-index `idx` at `node`.
    pub fn get(&self, node: usize, idx: &[usize]) -> f64 {
        self.node(node)[flat_index(self.dim(), idx)]
    }

    pub fn with_signature(mut self, signature: Vec<IndexTag>) -> Result<Self> {
        if signature.len() != self.signature.len() {
            return Err(HflowError::IllegalIndex(format!(
                "cannot retag rank {} field with rank {} signature",
                self.rank(),
                signature.len()
            )));
        }
        self.signature = signature;
        Ok(self)
    }

    pub fn same_layout(&self, other: &TensorField) -> bool {
        self.signature == other.signature && *self.chart == *other.chart
    }

    fn check_layout(&self, other: &TensorField) -> Result<()> {
        if !self.same_layout(other) {
            return Err(HflowError::ShapeMismatch(format!(
                "fields differ in chart or signature ({:?} vs {:?})",
                self.signature, other.signature
            )));
        }
        Ok(())
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &TensorField) -> Result<TensorField> {
        self.check_layout(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(Self {
            chart: self.chart.clone(),
            signature: self.signature.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &TensorField) -> Result<TensorField> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, alpha: f64) -> TensorField {
        Self {
            chart: self.chart.clone(),
            signature: self.signature.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Sup norm (max absolute component) or root-mean-square over nodes and components.
    ///
    /// The reduction runs sequentially in storage order so results are reproducible.
    pub fn norm(&self, which: NormKind) -> f64 {
        match which {
            NormKind::Sup => self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            NormKind::L2 => {
                if self.data.is_empty() {
                    return 0.0;
                }
                let sum: f64 = self.data.iter().map(|v| v * v).sum();
                (sum / self.data.len() as f64).sqrt()
            }
        }
    }

    pub fn sup(&self) -> f64 {
        self.norm(NormKind::Sup)
    }

    /// Sup norm of `self - other`.
    pub fn sup_diff(&self, other: &TensorField) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reorders the indices: output index `p` is input index `perm[p]`.
    pub fn permute(&self, perm: &[usize]) -> Result<TensorField> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(HflowError::IllegalIndex(format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let n = self.dim();
        let comps = self.components();
        let signature: Vec<IndexTag> = perm.iter().map(|&p| self.signature[p]).collect();
        let map: Vec<usize> = (0..comps)
            .map(|c| {
                let out_idx = unflatten(n, rank, c);
                let mut in_idx = vec![0; rank];
                for (p, &src) in perm.iter().enumerate() {
                    in_idx[src] = out_idx[p];
                }
                flat_index(n, &in_idx)
            })
            .collect();
        let mut data = vec![0.0; self.data.len()];
        for (dst, src) in data.chunks_mut(comps).zip(self.data.chunks(comps)) {
            for (c, &m) in map.iter().enumerate() {
                dst[c] = src[m];
            }
        }
        Ok(Self {
            chart: self.chart.clone(),
            signature,
            data,
        })
    }

    /// Contracts index `a` with index `b`; only coordinate/coordinate or ℝⁿ/ℝⁿ pairs of
    /// opposite variance are legal.
    pub fn contract(&self, a: usize, b: usize) -> Result<TensorField> {
        let rank = self.rank();
        if a >= rank || b >= rank || a == b {
            return Err(HflowError::IllegalIndex(format!("cannot contract positions {a} and {b} of rank {rank}")));
        }
        if !self.signature[a].pairs_with(self.signature[b]) {
            return Err(HflowError::IllegalIndex(format!(
                "contraction of {} with {} is not allowed",
                self.signature[a], self.signature[b]
            )));
        }
        let n = self.dim();
        let signature: Vec<IndexTag> = self
            .signature
            .iter()
            .enumerate()
            .filter(|(p, _)| *p != a && *p != b)
            .map(|(_, t)| *t)
            .collect();
        let out_comps = n.pow(signature.len() as u32);
        let comps = self.components();
        let mut data = vec![0.0; self.num_nodes() * out_comps];
        for (dst, src) in data.chunks_mut(out_comps).zip(self.data.chunks(comps)) {
            for c in 0..comps {
                let idx = unflatten(n, rank, c);
                if idx[a] != idx[b] {
                    continue;
                }
                let rest: Vec<usize> = idx
                    .iter()
                    .enumerate()
                    .filter(|(p, _)| *p != a && *p != b)
                    .map(|(_, &i)| i)
                    .collect();
                dst[flat_index(n, &rest)] += src[c];
            }
        }
        Ok(Self {
            chart: self.chart.clone(),
            signature,
            data,
        })
    }
}

/// A field together with its coordinate gradient.
///
/// The gradient carries one extra coord-down index in the leading position.
#[derive(Debug, Clone)]
pub struct FieldJet {
    pub value: TensorField,
    pub grad: TensorField,
}

impl FieldJet {
    pub fn new(value: TensorField, grad: TensorField) -> Result<Self> {
        let mut sig = vec![IndexTag::CoordDown];
        sig.extend_from_slice(value.signature());
        if grad.signature() != sig.as_slice() || **grad.chart() != **value.chart() {
            return Err(HflowError::ShapeMismatch(
                "gradient signature must be the value signature with a leading coord-down index".into(),
            ));
        }
        Ok(Self { value, grad })
    }
}

/// Row-major flat offset of a multi-index with every index ranging over `0..n`.
pub fn flat_index(n: usize, idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

pub fn unflatten(n: usize, rank: usize, mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; rank];
    for p in (0..rank).rev() {
        idx[p] = flat % n;
        flat /= n;
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> Arc<Chart> {
        Arc::new(Chart::periodic(2, 8, 1.0).unwrap())
    }

    #[test]
    fn zero_field_has_zero_norms() {
        let f = TensorField::zeros(chart(), vec![IndexTag::CoordUp]);
        assert_eq!(f.norm(NormKind::Sup), 0.0);
        assert_eq!(f.norm(NormKind::L2), 0.0);
    }

    #[test]
    fn sup_norm_of_single_spike() {
        let mut f = TensorField::zeros(chart(), vec![IndexTag::CoordUp, IndexTag::CoordDown]);
        f.node_mut(13)[2] = -3.0;
        assert_eq!(f.norm(NormKind::Sup), 3.0);
    }

    #[test]
    fn l2_norm_of_constant_is_abs_value() {
        let f = TensorField::from_node_fn(chart(), vec![IndexTag::RnDown], |_, _, out| out.fill(-2.5));
        assert!((f.norm(NormKind::L2) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn component_count_is_n_to_rank() {
        let f = TensorField::zeros(chart(), vec![IndexTag::CoordUp; 3]);
        assert_eq!(f.components(), 8);
        assert_eq!(f.data().len(), 64 * 8);
    }

    #[test]
    fn contraction_requires_matching_kinds() {
        let f = TensorField::zeros(chart(), vec![IndexTag::CoordUp, IndexTag::RnDown]);
        assert!(matches!(f.contract(0, 1), Err(HflowError::IllegalIndex(_))));
        let g = TensorField::from_node_fn(chart(), vec![IndexTag::CoordUp, IndexTag::CoordDown], |_, _, out| {
            out.copy_from_slice(&[1.0, 2.0, 3.0, 4.0])
        });
        let tr = g.contract(0, 1).unwrap();
        assert_eq!(tr.rank(), 0);
        assert_eq!(tr.node(5)[0], 5.0);
    }

    #[test]
    fn permute_transposes_matrices() {
        let g = TensorField::from_node_fn(chart(), vec![IndexTag::CoordUp, IndexTag::RnDown], |_, _, out| {
            out.copy_from_slice(&[1.0, 2.0, 3.0, 4.0])
        });
        let t = g.permute(&[1, 0]).unwrap();
        assert_eq!(t.signature(), &[IndexTag::RnDown, IndexTag::CoordUp]);
        assert_eq!(t.node(0), &[1.0, 3.0, 2.0, 4.0]);
    }
}

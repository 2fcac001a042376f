//! Canonical metric, index moving, ε-parallel extension and the Christoffel
//! symbols of the canonical metric.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HflowError, Result};
use crate::frame::FrameField;
use crate::grid::{flat_index, unflatten, FieldJet, IndexTag, TensorField};

use super::{node_matrix, Geometry, CONNECTION_SIGNATURE};

#[derive(Debug, Clone)]
pub struct CanonicalMetric {
    /// `g_ij = Σ_a ε_i^a(x,𝟘) ε_j^a(x,𝟘)`.
    pub g: TensorField,
    /// `g^ij`, the pointwise inverse.
    pub inverse: TensorField,
}

pub fn canonical_metric(frame: &FrameField) -> Result<CanonicalMetric> {
    let geo = Geometry::new(frame)?;
    Ok(CanonicalMetric {
        g: geo.metric.value,
        inverse: geo.metric_inv.value,
    })
}

/// Applies `m` to the index at `position` of a node's components:
/// `out[.., i, ..] = Σ_b m[i, b] v[.., b, ..]`.
pub(crate) fn apply_on_index(n: usize, rank: usize, v: &[f64], position: usize, m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (c, o) in out.iter_mut().enumerate() {
        let mut idx = unflatten(n, rank, c);
        let i = idx[position];
        let mut acc = 0.0;
        for b in 0..n {
            idx[position] = b;
            acc += m[(i, b)] * v[flat_index(n, &idx)];
        }
        *o = acc;
    }
    out
}

/// Moves the index at `position` to the base point or back.
///
/// coord-up → Rn-up contracts with `ε_a^j(x,𝟘)`; coord-down → Rn-down with
/// `ε_k^a(𝟘,x)`; the ℝⁿ → coordinate directions use the inverse matrices.
/// `frame` is `ε(𝟘,x)` and `coframe` is `ε(x,𝟘)`.
pub fn move_index(t: &TensorField, position: usize, frame: &TensorField, coframe: &TensorField) -> Result<TensorField> {
    let sig = t.signature();
    if position >= sig.len() {
        return Err(HflowError::IllegalIndex(format!("position {position} out of range for rank {}", sig.len())));
    }
    let n = t.dim();
    let rank = t.rank();
    // which matrix, transposed or not, and the new tag
    let (use_frame, transpose, tag) = match sig[position] {
        IndexTag::CoordUp => (false, false, IndexTag::RnUp),
        IndexTag::CoordDown => (true, true, IndexTag::RnDown),
        IndexTag::RnUp => (true, false, IndexTag::CoordUp),
        IndexTag::RnDown => (false, true, IndexTag::CoordDown),
    };
    let mut new_sig = sig.to_vec();
    new_sig[position] = tag;
    Ok(TensorField::from_node_fn(t.chart().clone(), new_sig, |node, _, out| {
        let m = node_matrix(if use_frame { frame } else { coframe }, node);
        let m = if transpose { m.transpose() } else { m };
        out.copy_from_slice(&apply_on_index(n, rank, t.node(node), position, &m));
    }))
}

/// The ε-parallel field equal to `value` (components with `signature`) at node `p`:
/// coordinate indices are transported by `ε(p,x) = ε(𝟘,x)∘ε(p,𝟘)` and its
/// inverse, ℝⁿ indices stay fixed. Returned with its exact gradient.
pub fn parallel_extend(geo: &Geometry, p: usize, value: &[f64], signature: &[IndexTag]) -> Result<FieldJet> {
    let chart = geo.chart().clone();
    let n = chart.dim();
    let rank = signature.len();
    let comps = n.pow(rank as u32);
    if value.len() != comps || p >= chart.num_nodes() {
        return Err(HflowError::ShapeMismatch("value does not match signature or node out of range".into()));
    }
    let e_p = node_matrix(&geo.frame.value, p);
    let einv_p = node_matrix(&geo.coframe.value, p);
    let nn = n * n;
    let mut grad_sig = vec![IndexTag::CoordDown];
    grad_sig.extend_from_slice(signature);
    let mut out_value = TensorField::zeros(chart.clone(), signature.to_vec());
    let mut out_grad = TensorField::zeros(chart.clone(), grad_sig);
    for node in 0..chart.num_nodes() {
        let e = node_matrix(&geo.frame.value, node);
        let einv = node_matrix(&geo.coframe.value, node);
        let de: Vec<DMatrix<f64>> = (0..n)
            .map(|r| DMatrix::from_row_slice(n, n, &geo.frame.grad.node(node)[r * nn..(r + 1) * nn]))
            .collect();
        let deinv: Vec<DMatrix<f64>> = (0..n)
            .map(|r| DMatrix::from_row_slice(n, n, &geo.coframe.grad.node(node)[r * nn..(r + 1) * nn]))
            .collect();
        // per-slot transport matrix and its derivatives
        let slots: Vec<(DMatrix<f64>, Vec<DMatrix<f64>>)> = signature
            .iter()
            .map(|tag| match tag {
                IndexTag::CoordUp => (&e * &einv_p, de.iter().map(|d| d * &einv_p).collect()),
                IndexTag::CoordDown => (
                    (&e_p * &einv).transpose(),
                    deinv.iter().map(|d| (&e_p * d).transpose()).collect(),
                ),
                _ => (DMatrix::identity(n, n), vec![DMatrix::zeros(n, n); n]),
            })
            .collect();
        let mut v = value.to_vec();
        for (pos, (m, _)) in slots.iter().enumerate() {
            v = apply_on_index(n, rank, &v, pos, m);
        }
        out_value.node_mut(node).copy_from_slice(&v);
        let g = out_grad.node_mut(node);
        for r in 0..n {
            let mut acc = vec![0.0; comps];
            for q in 0..rank {
                let mut w = value.to_vec();
                for (pos, (m, dm)) in slots.iter().enumerate() {
                    w = apply_on_index(n, rank, &w, pos, if pos == q { &dm[r] } else { m });
                }
                acc.iter_mut().zip(&w).for_each(|(a, b)| *a += b);
            }
            g[r * comps..(r + 1) * comps].copy_from_slice(&acc);
        }
    }
    FieldJet::new(out_value, out_grad)
}

/// `sup |∂_r g_ij + S_ri^a g_aj + S_rj^a g_ia|` for a connection-shaped `s`.
pub fn metric_compat_residual(s: &TensorField, g: &FieldJet) -> Result<f64> {
    if s.signature() != CONNECTION_SIGNATURE {
        return Err(HflowError::IllegalIndex("metric compatibility needs a connection-shaped field".into()));
    }
    let n = s.dim();
    let mut worst: f64 = 0.0;
    for node in 0..s.num_nodes() {
        let sv = s.node(node);
        let gv = g.value.node(node);
        let dg = g.grad.node(node);
        let sa = |i: usize, j: usize, k: usize| sv[(i * n + j) * n + k];
        for r in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let v = dg[(r * n + i) * n + j]
                        + (0..n)
                            .map(|a| sa(a, r, i) * gv[a * n + j] + sa(a, r, j) * gv[i * n + a])
                            .sum::<f64>();
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Overall sign and symmetrization weight of a Christoffel candidate
/// `Σ = sign · ½ · weight · (E_jk + E_kj)`, `E_jk^i = Γ_jk^i + T_jb^a g_ka g^ib`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChristoffelChoice {
    pub sign: f64,
    pub weight: f64,
}

impl ChristoffelChoice {
    /// Leading `−½` with the unnormalized symmetrization `E_jk + E_kj`.
    pub const PRINTED: Self = Self { sign: -1.0, weight: 1.0 };

    pub const CANDIDATES: [Self; 4] = [
        Self::PRINTED,
        Self { sign: -1.0, weight: 0.5 },
        Self { sign: 1.0, weight: 1.0 },
        Self { sign: 1.0, weight: 0.5 },
    ];
}

#[derive(Debug, Clone)]
pub struct ChristoffelSigma {
    pub sigma: TensorField,
    pub choice: ChristoffelChoice,
    /// Metric-compatibility residual of every candidate, in candidate order.
    pub candidate_residuals: Vec<(ChristoffelChoice, f64)>,
}

fn christoffel_candidate(geo: &Geometry, choice: ChristoffelChoice) -> TensorField {
    let n = geo.dim();
    let gamma = &geo.connection.gamma;
    let g = &geo.metric.value;
    let ginv = &geo.metric_inv.value;
    TensorField::from_node_fn(geo.chart().clone(), CONNECTION_SIGNATURE.to_vec(), |node, _, out| {
        let gm = gamma.node(node);
        let gv = g.node(node);
        let gi = ginv.node(node);
        let at = |i: usize, j: usize, k: usize| gm[(i * n + j) * n + k];
        let expr = |i: usize, j: usize, k: usize| {
            let mut acc = at(i, j, k);
            for a in 0..n {
                for b in 0..n {
                    acc += (at(a, j, b) - at(a, b, j)) * gv[k * n + a] * gi[i * n + b];
                }
            }
            acc
        };
        let c = choice.sign * 0.5 * choice.weight;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[(i * n + j) * n + k] = c * (expr(i, j, k) + expr(i, k, j));
                }
            }
        }
    })
}

/// Christoffel symbols of the canonical metric from `Γ`, `T` and `g`.
///
/// Every sign/weight candidate is evaluated and the one with the smallest
/// metric-compatibility residual is selected; all residuals are reported.
pub fn christoffel_sigma(geo: &Geometry) -> Result<ChristoffelSigma> {
    let mut candidate_residuals = Vec::new();
    let mut best: Option<(f64, ChristoffelChoice, TensorField)> = None;
    for choice in ChristoffelChoice::CANDIDATES {
        let sigma = christoffel_candidate(geo, choice);
        let res = metric_compat_residual(&sigma, &geo.metric)?;
        candidate_residuals.push((choice, res));
        if best.as_ref().is_none_or(|(b, _, _)| res < *b) {
            best = Some((res, choice, sigma));
        }
    }
    let (_, choice, sigma) = best.expect("candidate list is not empty");
    Ok(ChristoffelSigma {
        sigma,
        choice,
        candidate_residuals,
    })
}

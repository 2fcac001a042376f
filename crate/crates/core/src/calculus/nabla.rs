//! Covariant derivatives `∇` and `∇̃` of fields of any rank.

use rayon::prelude::*;

use crate::error::{HflowError, Result};
use crate::grid::{flat_index, gradient, unflatten, FieldJet, IndexTag, TensorField};

use super::CONNECTION_SIGNATURE;

#[derive(Clone, Copy)]
enum Slot {
    First,
    Second,
}

/// `∇_r t`: the connection enters through its first lower index,
/// `−Γ_ra^i t^a` for each coordinate upper index and `+Γ_rj^a t_a` for each
/// coordinate lower index. ℝⁿ indices are inert. Output is `[r, ..]`.
pub fn nabla(t: &FieldJet, gamma: &TensorField) -> Result<TensorField> {
    covariant(t, gamma, Slot::First)
}

/// `∇̃_r t`: as [`nabla`] but contracting the second lower index of `Γ`.
pub fn nabla_tilde(t: &FieldJet, gamma: &TensorField) -> Result<TensorField> {
    covariant(t, gamma, Slot::Second)
}

/// [`nabla`] with the gradient of `t` taken on the grid.
pub fn nabla_grid(t: &TensorField, gamma: &TensorField) -> Result<TensorField> {
    let jet = FieldJet::new(t.clone(), gradient(t)?)?;
    nabla(&jet, gamma)
}

fn covariant(t: &FieldJet, gamma: &TensorField, slot: Slot) -> Result<TensorField> {
    if gamma.signature() != CONNECTION_SIGNATURE {
        return Err(HflowError::IllegalIndex("second argument is not a connection".into()));
    }
    if **gamma.chart() != **t.value.chart() {
        return Err(HflowError::ShapeMismatch("field and connection live on different charts".into()));
    }
    let n = gamma.dim();
    let sig = t.value.signature().to_vec();
    let rank = sig.len();
    let comps = t.value.components();
    // Γ entry coupling output index `i` to summed index `a` for each kind of slot
    let coeff = move |g: &[f64], r: usize, i: usize, a: usize, up: bool| -> f64 {
        let at = |x: usize, y: usize, z: usize| g[(x * n + y) * n + z];
        match (up, slot) {
            (true, Slot::First) => -at(i, r, a),
            (true, Slot::Second) => -at(i, a, r),
            (false, Slot::First) => at(a, r, i),
            (false, Slot::Second) => at(a, i, r),
        }
    };
    let mut out = t.grad.clone();
    let idx_table: Vec<Vec<usize>> = (0..comps).map(|c| unflatten(n, rank, c)).collect();
    let coord_slots: Vec<(usize, bool)> = sig
        .iter()
        .enumerate()
        .filter(|(_, tag)| tag.is_coordinate())
        .map(|(p, tag)| (p, *tag == IndexTag::CoordUp))
        .collect();
    if coord_slots.is_empty() {
        return Ok(out);
    }
    let chunk = n * comps;
    out.data_mut()
        .par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(node, dst)| {
            let g = gamma.node(node);
            let v = t.value.node(node);
            for r in 0..n {
                for (c, idx) in idx_table.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(p, up) in &coord_slots {
                        let mut j = idx.clone();
                        for a in 0..n {
                            j[p] = a;
                            acc += coeff(g, r, idx[p], a, up) * v[flat_index(n, &j)];
                        }
                    }
                    dst[r * comps + c] += acc;
                }
            }
        });
    Ok(out)
}

//! Differential invariants of a frame: connection, torsion, curvatures,
//! covariant derivatives, canonical metric and the flow operators built on them.
//!
//! Storage order is "upper indices first, then lower indices, each in written
//! order": `Γ_jk^i` is stored as `[i, j, k]`, `𝔯_rj,k^i` as `[i, r, j, k]`,
//! `g_ij` as `[i, j]`. Coordinate gradients prepend a coord-down index.

mod metric;
mod nabla;
mod operators;

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HflowError, Result};
use crate::frame::{mat, FrameField, COFRAME_SIGNATURE, FRAME_SIGNATURE};
use crate::grid::{gradient, Chart, FieldJet, IndexTag, TensorField};

pub use metric::{
    canonical_metric, christoffel_sigma, metric_compat_residual, move_index, parallel_extend, CanonicalMetric,
    ChristoffelChoice, ChristoffelSigma,
};
pub use nabla::{nabla, nabla_grid, nabla_tilde};
pub use operators::{
    bianchi_lines, bianchi_residual, curvature_after_gauge, deturck_operator, deturck_vector, gamma_variation,
    gauge_act, gauge_transform_curvature, homogeneous_operator, jacobi_form, torsion_bracket, variation_check, BianchiLines, VariationReport,
    H_FORMS_TOLERANCE,
};

use IndexTag::{CoordDown as D, CoordUp as U};

pub const CONNECTION_SIGNATURE: [IndexTag; 3] = [U, D, D];
pub const CURVATURE_SIGNATURE: [IndexTag; 4] = [U, D, D, D];
pub const METRIC_SIGNATURE: [IndexTag; 2] = [D, D];
pub const INVERSE_METRIC_SIGNATURE: [IndexTag; 2] = [U, U];

/// Where the second derivatives entering `∂Γ` come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionRoute {
    /// Closed-form first and second derivatives of an analytic frame.
    Analytic,
    /// Grid first and second derivatives of the frame; `∂Γ` is assembled from them
    /// by the product rule, so `R̃ = 0` and `∇T = 𝔯` hold to rounding.
    GridSecond,
    /// `Γ` from grid first derivatives, then `∂Γ` by differentiating `Γ` on the grid;
    /// identities then hold only to discretization accuracy.
    GridConnection,
}

impl ConnectionRoute {
    pub fn default_for(frame: &FrameField) -> Self {
        if frame.is_analytic() {
            Self::Analytic
        } else {
            Self::GridSecond
        }
    }
}

/// `Γ_jk^i` together with its gradient `∂_r Γ_jk^i` (`[r, i, j, k]`).
#[derive(Debug, Clone)]
pub struct Connection {
    pub gamma: TensorField,
    pub grad: TensorField,
}

impl Connection {
    pub fn new(gamma: TensorField, grad: TensorField) -> Result<Self> {
        if gamma.signature() != CONNECTION_SIGNATURE {
            return Err(HflowError::IllegalIndex(format!(
                "connection needs signature {CONNECTION_SIGNATURE:?}, got {:?}",
                gamma.signature()
            )));
        }
        let jet = FieldJet::new(gamma, grad)?;
        Ok(Self {
            gamma: jet.value,
            grad: jet.grad,
        })
    }

    /// The zero connection on `chart`.
    pub fn zero(chart: Arc<Chart>) -> Self {
        Self {
            gamma: TensorField::zeros(chart.clone(), CONNECTION_SIGNATURE.to_vec()),
            grad: TensorField::zeros(chart, vec![D, U, D, D]),
        }
    }

    pub fn jet(&self) -> FieldJet {
        FieldJet {
            value: self.gamma.clone(),
            grad: self.grad.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.dim()
    }
}

/// Everything first-order about a frame, computed in one pass.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub route: ConnectionRoute,
    /// `ε(𝟘,x)` `[i, a]` and its gradient.
    pub frame: FieldJet,
    /// `ε(x,𝟘)` `[a, k]` and its gradient.
    pub coframe: FieldJet,
    pub connection: Connection,
    /// `g_ij` and its gradient.
    pub metric: FieldJet,
    /// `g^ij` and its gradient.
    pub metric_inv: FieldJet,
}

impl Geometry {
    pub fn new(frame: &FrameField) -> Result<Self> {
        Self::with_route(frame, ConnectionRoute::default_for(frame))
    }

    pub fn with_route(frame: &FrameField, route: ConnectionRoute) -> Result<Self> {
        if route == ConnectionRoute::Analytic && !frame.is_analytic() {
            return Err(HflowError::Config("the analytic route needs an analytic frame".into()));
        }
        let sampled;
        let source = if route != ConnectionRoute::Analytic && frame.is_analytic() {
            sampled = frame.to_sampled()?;
            &sampled
        } else {
            frame
        };
        let jets = source.jets(route != ConnectionRoute::GridConnection)?;
        let chart = frame.chart().clone();
        let n = chart.dim();
        let (nn, nnn) = (n * n, n * n * n);

        let per_node: Vec<NodeGeometry> = (0..chart.num_nodes())
            .into_par_iter()
            .map(|node| {
                node_geometry(
                    n,
                    node,
                    jets.value.node(node),
                    jets.grad.node(node),
                    jets.hessian.as_ref().map(|h| h.node(node)),
                )
            })
            .collect::<Result<_>>()?;

        let mut coframe = TensorField::zeros(chart.clone(), COFRAME_SIGNATURE.to_vec());
        let mut coframe_grad = TensorField::zeros(chart.clone(), vec![D, IndexTag::RnUp, D]);
        let mut gamma = TensorField::zeros(chart.clone(), CONNECTION_SIGNATURE.to_vec());
        let mut gamma_grad = TensorField::zeros(chart.clone(), vec![D, U, D, D]);
        let mut g = TensorField::zeros(chart.clone(), METRIC_SIGNATURE.to_vec());
        let mut g_grad = TensorField::zeros(chart.clone(), vec![D, D, D]);
        let mut ginv = TensorField::zeros(chart.clone(), INVERSE_METRIC_SIGNATURE.to_vec());
        let mut ginv_grad = TensorField::zeros(chart.clone(), vec![D, U, U]);
        for (node, geo) in per_node.iter().enumerate() {
            coframe.node_mut(node).copy_from_slice(&geo.einv[..nn]);
            coframe_grad.node_mut(node).copy_from_slice(&geo.deinv[..nnn]);
            gamma.node_mut(node).copy_from_slice(&geo.gamma);
            if let Some(dg) = &geo.dgamma {
                gamma_grad.node_mut(node).copy_from_slice(dg);
            }
            g.node_mut(node).copy_from_slice(&geo.g);
            g_grad.node_mut(node).copy_from_slice(&geo.dg);
            ginv.node_mut(node).copy_from_slice(&geo.ginv);
            ginv_grad.node_mut(node).copy_from_slice(&geo.dginv);
        }
        if route == ConnectionRoute::GridConnection {
            gamma_grad = gradient(&gamma)?;
        }
        Ok(Self {
            route,
            frame: FieldJet {
                value: jets.value,
                grad: jets.grad,
            },
            coframe: FieldJet {
                value: coframe,
                grad: coframe_grad,
            },
            connection: Connection {
                gamma,
                grad: gamma_grad,
            },
            metric: FieldJet { value: g, grad: g_grad },
            metric_inv: FieldJet {
                value: ginv,
                grad: ginv_grad,
            },
        })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.frame.value.chart()
    }

    pub fn dim(&self) -> usize {
        self.chart().dim()
    }

    pub fn torsion(&self) -> TensorField {
        torsion(&self.connection.gamma)
    }

    /// Torsion with its gradient, both antisymmetrized from the connection jet.
    pub fn torsion_jet(&self) -> FieldJet {
        FieldJet {
            value: torsion(&self.connection.gamma),
            grad: antisymmetrize_last_pair(&self.connection.grad),
        }
    }

    pub fn algebroid_curvature(&self) -> TensorField {
        algebroid_curvature(&self.connection)
    }

    pub fn tilde_curvature(&self) -> TensorField {
        tilde_curvature(&self.connection)
    }
}

struct NodeGeometry {
    einv: Vec<f64>,
    deinv: Vec<f64>,
    gamma: Vec<f64>,
    dgamma: Option<Vec<f64>>,
    g: Vec<f64>,
    dg: Vec<f64>,
    ginv: Vec<f64>,
    dginv: Vec<f64>,
}

fn node_geometry(n: usize, node: usize, e: &[f64], de: &[f64], dde: Option<&[f64]>) -> Result<NodeGeometry> {
    let (nn, nnn) = (n * n, n * n * n);
    let m = mat(n, e);
    let det = m.determinant();
    let inv = m
        .try_inverse()
        .filter(|_| det.abs() > crate::frame::DET_FLOOR)
        .ok_or(HflowError::SingularFrame { node, det })?;
    let mut einv = vec![0.0; nn];
    crate::frame::write_mat(&inv, &mut einv);
    let dmat = |r: usize| mat(n, &de[r * nn..(r + 1) * nn]);
    let mut deinv = vec![0.0; nnn];
    for r in 0..n {
        let d = -(&inv * dmat(r) * &inv);
        crate::frame::write_mat(&d, &mut deinv[r * nn..(r + 1) * nn]);
    }
    let ei = |a: usize, k: usize| einv[a * n + k];
    let mut gamma = vec![0.0; nnn];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                gamma[(i * n + j) * n + k] = (0..n).map(|a| de[(j * n + i) * n + a] * ei(a, k)).sum();
            }
        }
    }
    let dgamma = dde.map(|dde| {
        let mut out = vec![0.0; nn * nn];
        for r in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        out[((r * n + i) * n + j) * n + k] = (0..n)
                            .map(|a| {
                                dde[((r * n + j) * n + i) * n + a] * ei(a, k)
                                    + de[(j * n + i) * n + a] * deinv[(r * n + a) * n + k]
                            })
                            .sum();
                    }
                }
            }
        }
        out
    });
    let mut g = vec![0.0; nn];
    let mut ginv = vec![0.0; nn];
    let mut dg = vec![0.0; nnn];
    let mut dginv = vec![0.0; nnn];
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = (0..n).map(|a| ei(a, i) * ei(a, j)).sum();
            ginv[i * n + j] = (0..n).map(|a| e[i * n + a] * e[j * n + a]).sum();
            for r in 0..n {
                let di = |a: usize, k: usize| deinv[(r * n + a) * n + k];
                let dd = |i: usize, a: usize| de[(r * n + i) * n + a];
                dg[(r * n + i) * n + j] = (0..n).map(|a| di(a, i) * ei(a, j) + ei(a, i) * di(a, j)).sum();
                dginv[(r * n + i) * n + j] = (0..n).map(|a| dd(i, a) * e[j * n + a] + e[i * n + a] * dd(j, a)).sum();
            }
        }
    }
    Ok(NodeGeometry {
        einv,
        deinv,
        gamma,
        dgamma,
        g,
        dg,
        ginv,
        dginv,
    })
}

/// `Γ_jk^i = ε_k^a(x,𝟘) ∂_j ε_a^i(𝟘,x)` via the frame's default route.
pub fn gamma(frame: &FrameField) -> Result<TensorField> {
    Ok(Geometry::new(frame)?.connection.gamma)
}

/// `T_jk^i = Γ_jk^i − Γ_kj^i`.
pub fn torsion(gamma: &TensorField) -> TensorField {
    antisymmetrize_last_pair(gamma)
}

/// `t[.., j, k] − t[.., k, j]` on the last two indices.
fn antisymmetrize_last_pair(t: &TensorField) -> TensorField {
    let n = t.dim();
    let rank = t.rank();
    let head = n.pow(rank as u32 - 2);
    let mut out = t.clone();
    for (dst, src) in out.data_mut().chunks_mut(t.components()).zip(t.data().chunks(t.components())) {
        for h in 0..head {
            for j in 0..n {
                for k in 0..n {
                    dst[(h * n + j) * n + k] = src[(h * n + j) * n + k] - src[(h * n + k) * n + j];
                }
            }
        }
    }
    out
}

/// `𝔯_rj,k^i = ∂_r Γ_kj^i − ∂_j Γ_kr^i + Γ_kr^a Γ_aj^i − Γ_kj^a Γ_ar^i`, stored `[i, r, j, k]`.
pub fn algebroid_curvature(conn: &Connection) -> TensorField {
    let n = conn.dim();
    TensorField::from_node_fn(conn.gamma.chart().clone(), CURVATURE_SIGNATURE.to_vec(), |node, _, out| {
        let g = conn.gamma.node(node);
        let dg = conn.grad.node(node);
        let gm = |i: usize, j: usize, k: usize| g[(i * n + j) * n + k];
        let dgm = |r: usize, i: usize, j: usize, k: usize| dg[((r * n + i) * n + j) * n + k];
        for i in 0..n {
            for r in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let quad: f64 = (0..n).map(|a| gm(a, k, r) * gm(i, a, j) - gm(a, k, j) * gm(i, a, r)).sum();
                        out[((i * n + r) * n + j) * n + k] = dgm(r, i, k, j) - dgm(j, i, k, r) + quad;
                    }
                }
            }
        }
    })
}

/// `R̃_rj,k^i = ∂_r Γ_jk^i − ∂_j Γ_rk^i + Γ_rk^a Γ_ja^i − Γ_jk^a Γ_ra^i`, stored
/// `[i, r, j, k]`. Vanishes for every frame; returned as a diagnostic.
pub fn tilde_curvature(conn: &Connection) -> TensorField {
    let n = conn.dim();
    TensorField::from_node_fn(conn.gamma.chart().clone(), CURVATURE_SIGNATURE.to_vec(), |node, _, out| {
        let g = conn.gamma.node(node);
        let dg = conn.grad.node(node);
        let gm = |i: usize, j: usize, k: usize| g[(i * n + j) * n + k];
        let dgm = |r: usize, i: usize, j: usize, k: usize| dg[((r * n + i) * n + j) * n + k];
        for i in 0..n {
            for r in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let quad: f64 = (0..n).map(|a| gm(a, r, k) * gm(i, j, a) - gm(a, j, k) * gm(i, r, a)).sum();
                        out[((i * n + r) * n + j) * n + k] = dgm(r, i, j, k) - dgm(j, i, r, k) + quad;
                    }
                }
            }
        }
    })
}

/// Value of a pointwise matrix field at a node as an `n × n` matrix.
pub(crate) fn node_matrix(field: &TensorField, node: usize) -> DMatrix<f64> {
    mat(field.dim(), field.node(node))
}

/// Checks that `field` has the frame signature `[coord-up, Rn-down]`.
pub(crate) fn expect_frame_signature(field: &TensorField, what: &str) -> Result<()> {
    if field.signature() != FRAME_SIGNATURE {
        return Err(HflowError::IllegalIndex(format!(
            "{what} needs signature {FRAME_SIGNATURE:?}, got {:?}",
            field.signature()
        )));
    }
    Ok(())
}

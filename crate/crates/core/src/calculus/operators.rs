//! Operators assembled from the basic invariants: the flow operator `𝔥`, the
//! DeTurck terms, torsion bracket and Jacobi form, Bianchi lines, gauge action
//! and variation checks.

use serde::{Deserialize, Serialize};

use crate::catalog::MatrixFormula;
use crate::error::{HflowError, Result};
use crate::frame::{mat, write_mat, FrameBacking, FrameField, GaugeField, FRAME_SIGNATURE};
use crate::grid::{gradient, FieldJet, IndexTag, TensorField};

use super::{
    algebroid_curvature, antisymmetrize_last_pair, nabla, node_matrix, torsion, Connection, Geometry,
    CURVATURE_SIGNATURE,
};

/// Agreement demanded between the two forms of `𝔥`.
pub const H_FORMS_TOLERANCE: f64 = 1e-8;

fn vector_check(v: &TensorField, what: &str) -> Result<()> {
    if v.signature() != [IndexTag::CoordUp] {
        return Err(HflowError::IllegalIndex(format!("{what} must be a coord-up vector field")));
    }
    Ok(())
}

/// `T(ξ,η)^i = T_ab^i ξ^a η^b`.
pub fn torsion_bracket(t: &TensorField, xi: &TensorField, eta: &TensorField) -> Result<TensorField> {
    vector_check(xi, "ξ")?;
    vector_check(eta, "η")?;
    let n = t.dim();
    Ok(TensorField::from_node_fn(t.chart().clone(), vec![IndexTag::CoordUp], |node, _, out| {
        let tv = t.node(node);
        let (x, y) = (xi.node(node), eta.node(node));
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    acc += tv[(i * n + a) * n + b] * x[a] * y[b];
                }
            }
            *o = acc;
        }
    }))
}

/// `J(ξ,η,σ) = T(ξ,T(η,σ)) + T(η,T(σ,ξ)) + T(σ,T(ξ,η))`.
pub fn jacobi_form(t: &TensorField, xi: &TensorField, eta: &TensorField, sigma: &TensorField) -> Result<TensorField> {
    let a = torsion_bracket(t, xi, &torsion_bracket(t, eta, sigma)?)?;
    let b = torsion_bracket(t, eta, &torsion_bracket(t, sigma, xi)?)?;
    let c = torsion_bracket(t, sigma, &torsion_bracket(t, xi, eta)?)?;
    a.axpy(1.0, &b)?.axpy(1.0, &c)
}

/// The three expressions of the first Bianchi identity, each a vector field.
#[derive(Debug, Clone)]
pub struct BianchiLines {
    /// `∇_ξT(η,σ) + ∇_ηT(σ,ξ) + ∇_σT(ξ,η)`.
    pub cyclic_nabla_torsion: TensorField,
    /// `𝔯(η,σ)(ξ) + 𝔯(σ,ξ)(η) + 𝔯(ξ,η)(σ)`.
    pub cyclic_curvature: TensorField,
    /// `J(ξ,η,σ)`.
    pub jacobi: TensorField,
}

impl BianchiLines {
    /// Largest pairwise difference of the three lines taken literally.
    pub fn literal_residual(&self) -> f64 {
        let d = |a: &TensorField, b: &TensorField| a.sup_diff(b).expect("same layout");
        d(&self.cyclic_nabla_torsion, &self.cyclic_curvature)
            .max(d(&self.cyclic_curvature, &self.jacobi))
            .max(d(&self.cyclic_nabla_torsion, &self.jacobi))
    }

    /// Largest pairwise difference with the Jacobi line entering as `−J`, the
    /// sign under which the identity holds for the torsion bracket as defined.
    pub fn residual(&self) -> f64 {
        let minus_j = self.jacobi.scale(-1.0);
        let d = |a: &TensorField, b: &TensorField| a.sup_diff(b).expect("same layout");
        d(&self.cyclic_nabla_torsion, &self.cyclic_curvature)
            .max(d(&self.cyclic_curvature, &minus_j))
            .max(d(&self.cyclic_nabla_torsion, &minus_j))
    }
}

pub fn bianchi_lines(geo: &Geometry, xi: &TensorField, eta: &TensorField, sigma: &TensorField) -> Result<BianchiLines> {
    for (v, what) in [(xi, "ξ"), (eta, "η"), (sigma, "σ")] {
        vector_check(v, what)?;
    }
    let n = geo.dim();
    let tjet = geo.torsion_jet();
    let nabla_t = nabla(&tjet, &geo.connection.gamma)?; // [r, i, j, k]
    let curv = geo.algebroid_curvature(); // [i, r, j, k]
    // (∇_u T)(v, w)^i and 𝔯(v, w)(u)^i at one node
    let nt = |node: usize, u: &[f64], v: &[f64], w: &[f64], out: &mut [f64]| {
        let d = nabla_t.node(node);
        for (i, o) in out.iter_mut().enumerate() {
            for r in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        *o += d[((r * n + i) * n + a) * n + b] * u[r] * v[a] * w[b];
                    }
                }
            }
        }
    };
    let rc = |node: usize, u: &[f64], v: &[f64], w: &[f64], out: &mut [f64]| {
        let c = curv.node(node);
        for (i, o) in out.iter_mut().enumerate() {
            for r in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        *o += c[((i * n + a) * n + b) * n + r] * v[a] * w[b] * u[r];
                    }
                }
            }
        }
    };
    let chart = geo.chart().clone();
    let cyclic = |f: &(dyn Fn(usize, &[f64], &[f64], &[f64], &mut [f64]) + Sync)| {
        TensorField::from_node_fn(chart.clone(), vec![IndexTag::CoordUp], |node, _, out| {
            let (x, y, s) = (xi.node(node), eta.node(node), sigma.node(node));
            f(node, x, y, s, out);
            f(node, y, s, x, out);
            f(node, s, x, y, out);
        })
    };
    Ok(BianchiLines {
        cyclic_nabla_torsion: cyclic(&nt),
        cyclic_curvature: cyclic(&rc),
        jacobi: jacobi_form(&torsion(&geo.connection.gamma), xi, eta, sigma)?,
    })
}

/// Sign-consistent Bianchi residual; see [`BianchiLines::residual`].
pub fn bianchi_residual(geo: &Geometry, xi: &TensorField, eta: &TensorField, sigma: &TensorField) -> Result<f64> {
    Ok(bianchi_lines(geo, xi, eta, sigma)?.residual())
}

/// `𝔥_j^i = −g^bc 𝔯_(j)c,b^i`, checked against `−g^bc ∇_b T_(j)c^i`.
///
/// Output has the frame signature `[coord-up, Rn-down]`. A disagreement above
/// [`H_FORMS_TOLERANCE`] is reported as an identity violation.
pub fn homogeneous_operator(geo: &Geometry) -> Result<TensorField> {
    let n = geo.dim();
    let curv = geo.algebroid_curvature();
    let nabla_t = nabla(&geo.torsion_jet(), &geo.connection.gamma)?;
    let e = &geo.frame.value;
    let ginv = &geo.metric_inv.value;
    let assemble = |source: &TensorField, from_curvature: bool| {
        TensorField::from_node_fn(geo.chart().clone(), FRAME_SIGNATURE.to_vec(), |node, _, out| {
            let s = source.node(node);
            let ev = e.node(node);
            let gi = ginv.node(node);
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            for c in 0..n {
                                let v = if from_curvature {
                                    s[((i * n + a) * n + c) * n + b]
                                } else {
                                    s[((b * n + i) * n + a) * n + c]
                                };
                                acc += gi[b * n + c] * ev[a * n + j] * v;
                            }
                        }
                    }
                    out[i * n + j] = -acc;
                }
            }
        })
    };
    let h = assemble(&curv, true);
    let alt = assemble(&nabla_t, false);
    let gap = h.sup_diff(&alt)?;
    if !(gap <= H_FORMS_TOLERANCE) {
        return Err(HflowError::IdentityViolation {
            what: "flow operator: curvature form vs covariant-torsion form".into(),
            value: gap,
            tolerance: H_FORMS_TOLERANCE,
        });
    }
    Ok(h)
}

/// `W^i = g^ab (Γ_ab^i − Γ̄_ab^i)` with its gradient.
pub fn deturck_vector(geo: &Geometry, reference: &Connection) -> Result<FieldJet> {
    let n = geo.dim();
    if **reference.gamma.chart() != **geo.chart() {
        return Err(HflowError::ShapeMismatch("reference connection lives on another chart".into()));
    }
    let conn = &geo.connection;
    let ginv = &geo.metric_inv;
    let value = TensorField::from_node_fn(geo.chart().clone(), vec![IndexTag::CoordUp], |node, _, out| {
        let (g, gb, gi) = (conn.gamma.node(node), reference.gamma.node(node), ginv.value.node(node));
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..n * n)
                .map(|ab| gi[ab] * (g[i * n * n + ab] - gb[i * n * n + ab]))
                .sum();
        }
    });
    let grad = TensorField::from_node_fn(
        geo.chart().clone(),
        vec![IndexTag::CoordDown, IndexTag::CoordUp],
        |node, _, out| {
            let (g, gb, gi) = (conn.gamma.node(node), reference.gamma.node(node), ginv.value.node(node));
            let (dg, dgb, dgi) = (conn.grad.node(node), reference.grad.node(node), ginv.grad.node(node));
            let nnn = n * n * n;
            for r in 0..n {
                for i in 0..n {
                    out[r * n + i] = (0..n * n)
                        .map(|ab| {
                            dgi[r * n * n + ab] * (g[i * n * n + ab] - gb[i * n * n + ab])
                                + gi[ab] * (dg[r * nnn + i * n * n + ab] - dgb[r * nnn + i * n * n + ab])
                        })
                        .sum();
                }
            }
        },
    );
    FieldJet::new(value, grad)
}

/// `𝔚_j^i = ε_j^a(𝟘,x) ∇_a W^i`, frame signature.
pub fn deturck_operator(geo: &Geometry, reference: &Connection) -> Result<TensorField> {
    let n = geo.dim();
    let w = deturck_vector(geo, reference)?;
    let nw = nabla(&w, &geo.connection.gamma)?; // [a, i]
    let e = &geo.frame.value;
    Ok(TensorField::from_node_fn(geo.chart().clone(), FRAME_SIGNATURE.to_vec(), |node, _, out| {
        let (d, ev) = (nw.node(node), e.node(node));
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|a| ev[a * n + j] * d[a * n + i]).sum();
            }
        }
    }))
}

/// `(𝔞ε)_j^i = 𝔞_a^i ε_j^a` pointwise. Analytic inputs give an analytic frame.
pub fn gauge_act(gauge: &GaugeField, frame: &FrameField) -> Result<FrameField> {
    if let (Some(a), Some(f)) = (&gauge.formula, frame.formula()) {
        if **gauge.values.chart() == **frame.chart() {
            return FrameField::analytic(frame.chart().clone(), MatrixFormula::product(a.clone(), f.clone()));
        }
    }
    if **gauge.values.chart() != **frame.chart() {
        return Err(HflowError::ShapeMismatch("gauge and frame live on different charts".into()));
    }
    let n = frame.dim();
    let values = frame.values();
    let product = TensorField::from_node_fn(frame.chart().clone(), FRAME_SIGNATURE.to_vec(), |node, _, out| {
        write_mat(&(node_matrix(&gauge.values, node) * mat(n, values.node(node))), out)
    });
    FrameField::sampled(product)
}

/// `𝔯′_rj,m^i = 𝔞_a^i 𝔯_rj,b^a 𝔟_m^b`, the pair `r, j` untouched.
pub fn gauge_transform_curvature(gauge: &GaugeField, curvature: &TensorField) -> Result<TensorField> {
    if curvature.signature() != CURVATURE_SIGNATURE {
        return Err(HflowError::IllegalIndex("expected an algebroid curvature field".into()));
    }
    let n = curvature.dim();
    let inv = gauge.inverse();
    Ok(TensorField::from_node_fn(curvature.chart().clone(), CURVATURE_SIGNATURE.to_vec(), |node, _, out| {
        let (a, b, c) = (gauge.values.node(node), inv.node(node), curvature.node(node));
        for i in 0..n {
            for r in 0..n {
                for j in 0..n {
                    for m in 0..n {
                        let mut acc = 0.0;
                        for p in 0..n {
                            for q in 0..n {
                                acc += a[i * n + p] * c[((p * n + r) * n + j) * n + q] * b[q * n + m];
                            }
                        }
                        out[((i * n + r) * n + j) * n + m] = acc;
                    }
                }
            }
        }
    }))
}

/// Discrepancies between finite-difference and closed-form variations of `Γ` and `T`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VariationReport {
    pub step: f64,
    /// `sup |dΓ/dt (central difference) − ∇_r h_(k)^i|`.
    pub gamma_discrepancy: f64,
    /// `sup |dT/dt (central difference) − (∇_r h_(k)^i − ∇_k h_(r)^i)|`.
    pub torsion_discrepancy: f64,
    /// `sup |∇_r h_(k)^i|`, for scale.
    pub gamma_rate_sup: f64,
}

/// Closed-form variation of `Γ` along `ε + s h`: `∇_r h_(k)^i` stored `[i, r, k]`.
pub fn gamma_variation(geo: &Geometry, h: &FrameBacking) -> Result<TensorField> {
    let chart = geo.chart().clone();
    let n = chart.dim();
    let nn = n * n;
    let (hv, hg) = direction_jet(geo, h)?;
    let coframe = &geo.coframe;
    // h_(k)^i = h_a^i ε_k^a(x,𝟘) with the product rule for its gradient
    let moved = TensorField::from_node_fn(chart.clone(), vec![IndexTag::CoordUp, IndexTag::CoordDown], |node, _, out| {
        write_mat(&(mat(n, hv.node(node)) * node_matrix(&coframe.value, node)), out)
    });
    let moved_grad = TensorField::from_node_fn(
        chart.clone(),
        vec![IndexTag::CoordDown, IndexTag::CoordUp, IndexTag::CoordDown],
        |node, _, out| {
            let (h0, einv) = (mat(n, hv.node(node)), node_matrix(&coframe.value, node));
            for r in 0..n {
                let dh = mat(n, &hg.node(node)[r * nn..(r + 1) * nn]);
                let deinv = mat(n, &coframe.grad.node(node)[r * nn..(r + 1) * nn]);
                write_mat(&(dh * &einv + &h0 * deinv), &mut out[r * nn..(r + 1) * nn]);
            }
        },
    );
    let nab = nabla(&FieldJet::new(moved, moved_grad)?, &geo.connection.gamma)?; // [r, i, k]
    nab.permute(&[1, 0, 2])
}

fn direction_jet(geo: &Geometry, h: &FrameBacking) -> Result<(TensorField, TensorField)> {
    let chart = geo.chart().clone();
    let n = chart.dim();
    let nn = n * n;
    match h {
        FrameBacking::Analytic(f) if geo.route == super::ConnectionRoute::Analytic => {
            let v = TensorField::from_node_fn(chart.clone(), FRAME_SIGNATURE.to_vec(), |_, x, out| {
                write_mat(&f.value(x), out)
            });
            let g = TensorField::from_node_fn(
                chart.clone(),
                vec![IndexTag::CoordDown, IndexTag::CoordUp, IndexTag::RnDown],
                |_, x, out| {
                    let jet = f.jet(x);
                    for r in 0..n {
                        write_mat(&jet.d[r], &mut out[r * nn..(r + 1) * nn]);
                    }
                },
            );
            Ok((v, g))
        }
        FrameBacking::Analytic(f) => {
            let v = TensorField::from_node_fn(chart.clone(), FRAME_SIGNATURE.to_vec(), |_, x, out| {
                write_mat(&f.value(x), out)
            });
            let g = gradient(&v)?;
            Ok((v, g))
        }
        FrameBacking::Sampled(v) => {
            super::expect_frame_signature(v, "variation direction")?;
            Ok((v.clone(), gradient(v)?))
        }
    }
}

fn perturbed(frame: &FrameField, h: &FrameBacking, s: f64) -> Result<FrameField> {
    match (frame.backing(), h) {
        (FrameBacking::Analytic(f), FrameBacking::Analytic(d)) => FrameField::analytic(
            frame.chart().clone(),
            MatrixFormula::sum(f.clone(), MatrixFormula::scaled(s, d.clone())),
        ),
        _ => {
            let hv = match h {
                FrameBacking::Analytic(d) => {
                    TensorField::from_node_fn(frame.chart().clone(), FRAME_SIGNATURE.to_vec(), |_, x, out| {
                        write_mat(&d.value(x), out)
                    })
                }
                FrameBacking::Sampled(v) => v.clone(),
            };
            FrameField::sampled(frame.values().axpy(s, &hv)?)
        }
    }
}

/// Compares central differences of `Γ` and `T` along `ε + s h` with the
/// closed-form variations `∇_r h_(k)^i` and `∇_r h_(k)^i − ∇_k h_(r)^i`.
pub fn variation_check(frame: &FrameField, h: &FrameBacking, step: f64) -> Result<VariationReport> {
    let route = super::ConnectionRoute::default_for(frame);
    let geo = Geometry::with_route(frame, route)?;
    let gp = Geometry::with_route(&perturbed(frame, h, step)?, route)?.connection.gamma;
    let gm = Geometry::with_route(&perturbed(frame, h, -step)?, route)?.connection.gamma;
    let fd_gamma = gp.axpy(-1.0, &gm)?.scale(0.5 / step);
    let fd_torsion = torsion(&gp).axpy(-1.0, &torsion(&gm))?.scale(0.5 / step);
    let rate = gamma_variation(&geo, h)?;
    let torsion_rate = antisymmetrize_last_pair(&rate);
    Ok(VariationReport {
        step,
        gamma_discrepancy: fd_gamma.sup_diff(&rate)?,
        torsion_discrepancy: fd_torsion.sup_diff(&torsion_rate)?,
        gamma_rate_sup: rate.sup(),
    })
}

/// Algebroid curvature recomputed after a gauge action.
pub fn curvature_after_gauge(gauge: &GaugeField, frame: &FrameField) -> Result<TensorField> {
    let acted = gauge_act(gauge, frame)?;
    Ok(algebroid_curvature(&Geometry::new(&acted)?.connection))
}

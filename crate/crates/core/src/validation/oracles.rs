//! Independent reference evaluations used to check the calculus code.
//!
//! These work from frame values or first derivatives of a closed-form matrix
//! field at single points, with their own index loops, and share no code with
//! the grid-level implementations.

use nalgebra::DMatrix;

use crate::catalog::MatrixFormula;

/// Central-difference step used by the oracles.
pub const ORACLE_STEP: f64 = 1e-5;

fn shifted(x: &[f64], axis: usize, h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[axis] += h;
    y
}

/// `Γ_jk^i` at `x` from exact first derivatives, stored `[i, j, k]`.
pub fn gamma_at(formula: &MatrixFormula, x: &[f64]) -> Vec<f64> {
    let n = formula.dim();
    let jet = formula.jet(x);
    let inv = jet.value.clone().try_inverse().expect("oracle point must be regular");
    let mut out = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for a in 0..n {
                    acc += jet.d[j][(i, a)] * inv[(a, k)];
                }
                out[(i * n + j) * n + k] = acc;
            }
        }
    }
    out
}

/// `∂_r Γ_jk^i` by central differences of [`gamma_at`], stored `[r, i, j, k]`.
pub fn gamma_gradient_at(formula: &MatrixFormula, x: &[f64], h: f64) -> Vec<f64> {
    let n = formula.dim();
    let nnn = n * n * n;
    let mut out = vec![0.0; n * nnn];
    for r in 0..n {
        let p = gamma_at(formula, &shifted(x, r, h));
        let m = gamma_at(formula, &shifted(x, r, -h));
        for c in 0..nnn {
            out[r * nnn + c] = (p[c] - m[c]) / (2.0 * h);
        }
    }
    out
}

/// Algebroid curvature at `x`, `[i, r, j, k]`, with `∂Γ` by finite differences.
pub fn algebroid_curvature_at(formula: &MatrixFormula, x: &[f64]) -> Vec<f64> {
    let n = formula.dim();
    let g = gamma_at(formula, x);
    let dg = gamma_gradient_at(formula, x, ORACLE_STEP);
    let gm = |i: usize, j: usize, k: usize| g[(i * n + j) * n + k];
    let d = |r: usize, i: usize, j: usize, k: usize| dg[((r * n + i) * n + j) * n + k];
    let mut out = vec![0.0; n.pow(4)];
    for i in 0..n {
        for r in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut v = d(r, i, k, j) - d(j, i, k, r);
                    for a in 0..n {
                        v += gm(a, k, r) * gm(i, a, j) - gm(a, k, j) * gm(i, a, r);
                    }
                    out[((i * n + r) * n + j) * n + k] = v;
                }
            }
        }
    }
    out
}

/// Canonical metric `ε(x,𝟘)ᵀ ε(x,𝟘)` at `x` from frame values only.
pub fn metric_at(formula: &MatrixFormula, x: &[f64]) -> DMatrix<f64> {
    let inv = formula.value(x).try_inverse().expect("oracle point must be regular");
    inv.transpose() * inv
}

/// Textbook Christoffel symbols `½ g^ia (∂_j g_ak + ∂_k g_aj − ∂_a g_jk)` of the
/// canonical metric, `[i, j, k]`, with metric derivatives by central differences.
pub fn classical_christoffel_at(formula: &MatrixFormula, x: &[f64]) -> Vec<f64> {
    let n = formula.dim();
    let h = ORACLE_STEP;
    let dg: Vec<DMatrix<f64>> = (0..n)
        .map(|r| (metric_at(formula, &shifted(x, r, h)) - metric_at(formula, &shifted(x, r, -h))) / (2.0 * h))
        .collect();
    let ginv = metric_at(formula, x).try_inverse().expect("metric is positive definite");
    let mut out = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for a in 0..n {
                    acc += ginv[(i, a)] * (dg[j][(a, k)] + dg[k][(a, j)] - dg[a][(j, k)]);
                }
                out[(i * n + j) * n + k] = 0.5 * acc;
            }
        }
    }
    out
}

/// Flow operator `−g^bc ε_j^a(𝟘,x) 𝔯_ac,b^i` assembled from the oracle curvature, `[i, j]`.
pub fn flow_operator_at(formula: &MatrixFormula, x: &[f64]) -> Vec<f64> {
    let n = formula.dim();
    let e = formula.value(x);
    let ginv = &e * e.transpose();
    let curv = algebroid_curvature_at(formula, x);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        acc += ginv[(b, c)] * e[(a, j)] * curv[((i * n + a) * n + c) * n + b];
                    }
                }
            }
            out[i * n + j] = -acc;
        }
    }
    out
}

/// Lie bracket `[X, Y]^i = X^a ∂_a Y^i − Y^a ∂_a X^i` of two vector fields given
/// as closures, derivatives by central differences.
pub fn lie_bracket_at<F, G>(x_field: F, y_field: G, x: &[f64]) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let h = ORACLE_STEP;
    let (xv, yv) = (x_field(x), y_field(x));
    let mut out = vec![0.0; n];
    for a in 0..n {
        let (xp, xm) = (x_field(&shifted(x, a, h)), x_field(&shifted(x, a, -h)));
        let (yp, ym) = (y_field(&shifted(x, a, h)), y_field(&shifted(x, a, -h)));
        for i in 0..n {
            out[i] += xv[a] * (yp[i] - ym[i]) / (2.0 * h) - yv[a] * (xp[i] - xm[i]) / (2.0 * h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heisenberg_gamma_has_single_entry() {
        let g = gamma_at(&MatrixFormula::Heisenberg, &[0.3, -0.2, 0.5]);
        for (c, v) in g.iter().enumerate() {
            let expected = if c == (2 * 3) * 3 + 1 { 1.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-14, "component {c}: {v}");
        }
    }

    #[test]
    fn flat_metric_has_no_christoffel_symbols() {
        let c = classical_christoffel_at(&MatrixFormula::identity(2), &[0.1, 0.2]);
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn coordinate_fields_commute() {
        let b = lie_bracket_at(|_| vec![1.0, 0.0], |_| vec![0.0, 1.0], &[0.4, 0.1]);
        assert!(b.iter().all(|v| v.abs() < 1e-12));
    }
}

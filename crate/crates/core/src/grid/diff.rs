//! Partial derivatives of grid fields.
//!
//! Periodic charts differentiate spectrally; open boxes use fourth-order central
//! differences with fourth-order one-sided stencils on the two outermost nodes.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::chart::{Chart, ChartKind};
use super::field::{IndexTag, TensorField};
use crate::error::{HflowError, Result};

/// One-dimensional derivative operator along a single axis of a chart.
enum LineOperator {
    Spectral {
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
        wavenumbers: Vec<f64>,
    },
    FiniteDifference {
        inv_h: f64,
    },
}

impl LineOperator {
    fn new(chart: &Chart, axis: usize) -> Result<Self> {
        let len = chart.resolution()[axis];
        if len < chart.stencil_width() {
            return Err(HflowError::Config(format!(
                "resolution {len} on axis {axis} is too small for the differentiation stencil"
            )));
        }
        Ok(match chart.kind() {
            ChartKind::PeriodicBox => {
                let mut planner = FftPlanner::new();
                let scale = 2.0 * PI / chart.extent(axis);
                let wavenumbers = (0..len)
                    .map(|m| {
                        if 2 * m == len {
                            // Nyquist mode has no odd-derivative counterpart
                            0.0
                        } else if 2 * m < len {
                            m as f64 * scale
                        } else {
                            (m as f64 - len as f64) * scale
                        }
                    })
                    .collect();
                LineOperator::Spectral {
                    forward: planner.plan_fft_forward(len),
                    inverse: planner.plan_fft_inverse(len),
                    wavenumbers,
                }
            }
            ChartKind::OpenBox => LineOperator::FiniteDifference {
                inv_h: 1.0 / chart.spacing(axis),
            },
        })
    }

    fn apply(&self, line: &[f64], out: &mut [f64]) {
        match self {
            LineOperator::Spectral {
                forward,
                inverse,
                wavenumbers,
            } => {
                let len = line.len();
                let mut buf: Vec<Complex<f64>> = line.iter().map(|&v| Complex::new(v, 0.0)).collect();
                forward.process(&mut buf);
                for (c, &k) in buf.iter_mut().zip(wavenumbers) {
                    *c *= Complex::new(0.0, k);
                }
                inverse.process(&mut buf);
                let norm = 1.0 / len as f64;
                for (o, c) in out.iter_mut().zip(&buf) {
                    *o = c.re * norm;
                }
            }
            LineOperator::FiniteDifference { inv_h } => fd4(line, *inv_h, out),
        }
    }
}

fn fd4(f: &[f64], inv_h: f64, out: &mut [f64]) {
    let n = f.len();
    let s = inv_h / 12.0;
    out[0] = s * (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]);
    out[1] = s * (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]);
    for i in 2..n - 2 {
        out[i] = s * (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]);
    }
    out[n - 2] = -s * (-3.0 * f[n - 1] - 10.0 * f[n - 2] + 18.0 * f[n - 3] - 6.0 * f[n - 4] + f[n - 5]);
    out[n - 1] = -s * (-25.0 * f[n - 1] + 48.0 * f[n - 2] - 36.0 * f[n - 3] + 16.0 * f[n - 4] - 3.0 * f[n - 5]);
}

/// Partial derivative of every component of `f` along `axis`; the signature is unchanged.
pub fn differentiate(f: &TensorField, axis: usize) -> Result<TensorField> {
    let chart = f.chart().clone();
    if axis >= chart.dim() {
        return Err(HflowError::Config(format!(
            "axis {axis} out of range for a {}-dimensional chart",
            chart.dim()
        )));
    }
    let op = LineOperator::new(&chart, axis)?;
    let len = chart.resolution()[axis];
    let stride = chart.stride(axis);
    let comps = f.components();
    let outer = chart.num_nodes() / (len * stride);
    let data = f.data();

    // one task per (outer, inner) line of nodes; every component handled inside
    let lines: Vec<(usize, Vec<f64>)> = (0..outer * stride)
        .into_par_iter()
        .map(|line_id| {
            let base = (line_id / stride) * len * stride + line_id % stride;
            let mut line = vec![0.0; len];
            let mut d = vec![0.0; len];
            let mut result = vec![0.0; len * comps];
            for c in 0..comps {
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[(base + i * stride) * comps + c];
                }
                op.apply(&line, &mut d);
                for (i, v) in d.iter().enumerate() {
                    result[i * comps + c] = *v;
                }
            }
            (base, result)
        })
        .collect();

    let mut out = TensorField::zeros(chart, f.signature().to_vec());
    let dst = out.data_mut();
    for (base, result) in lines {
        for i in 0..len {
            let node = base + i * stride;
            dst[node * comps..(node + 1) * comps].copy_from_slice(&result[i * comps..(i + 1) * comps]);
        }
    }
    Ok(out)
}

/// Gradient of `f`: a new leading coord-down index `r` holding `∂_r f`.
pub fn gradient(f: &TensorField) -> Result<TensorField> {
    let n = f.dim();
    let partials = (0..n).map(|axis| differentiate(f, axis)).collect::<Result<Vec<_>>>()?;
    let mut sig = vec![IndexTag::CoordDown];
    sig.extend_from_slice(f.signature());
    let comps = f.components();
    let mut out = TensorField::zeros(f.chart().clone(), sig);
    let out_comps = out.components();
    for (node, dst) in out.data_mut().chunks_mut(out_comps).enumerate() {
        for (r, p) in partials.iter().enumerate() {
            dst[r * comps..(r + 1) * comps].copy_from_slice(p.node(node));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::field::NormKind;

    fn scalar(chart: &Arc<Chart>, f: impl Fn(&[f64]) -> f64 + Sync) -> TensorField {
        TensorField::from_node_fn(chart.clone(), vec![], |_, x, out| out[0] = f(x))
    }

    #[test]
    fn constant_has_zero_derivative() {
        for chart in [Chart::periodic(2, 16, 3.0).unwrap(), Chart::open_box(2, 12, -1.0, 2.0).unwrap()] {
            let chart = Arc::new(chart);
            let f = scalar(&chart, |_| 4.2);
            let d = differentiate(&f, 1).unwrap();
            assert!(d.norm(NormKind::Sup) < 1e-12);
        }
    }

    #[test]
    fn spectral_sine_derivative() {
        let chart = Arc::new(Chart::periodic(1, 32, 2.0 * PI).unwrap());
        let f = scalar(&chart, |x| x[0].sin());
        let d = differentiate(&f, 0).unwrap();
        let exact = scalar(&chart, |x| x[0].cos());
        assert!(d.sup_diff(&exact).unwrap() <= 1e-10);
    }

    #[test]
    fn bilinear_on_open_box() {
        let chart = Arc::new(Chart::open_box(2, 16, -1.0, 1.5).unwrap());
        let f = scalar(&chart, |x| x[0] * x[1]);
        let d = differentiate(&f, 0).unwrap();
        let exact = scalar(&chart, |x| x[1]);
        assert!(d.sup_diff(&exact).unwrap() <= 1e-8);
    }

    #[test]
    fn quartic_is_exact_under_fd4() {
        let chart = Arc::new(Chart::open_box(1, 10, 0.0, 1.0).unwrap());
        let f = scalar(&chart, |x| x[0].powi(4) - 2.0 * x[0].powi(3));
        let d = differentiate(&f, 0).unwrap();
        let exact = scalar(&chart, |x| 4.0 * x[0].powi(3) - 6.0 * x[0].powi(2));
        assert!(d.sup_diff(&exact).unwrap() <= 1e-11);
    }

    #[test]
    fn band_limited_trig_is_exact() {
        let chart = Arc::new(Chart::periodic(2, 24, 2.0 * PI).unwrap());
        let f = scalar(&chart, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos() + (5.0 * x[1]).cos());
        let d = differentiate(&f, 1).unwrap();
        let exact = scalar(&chart, |x| -2.0 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin() - 5.0 * (5.0 * x[1]).sin());
        assert!(d.sup_diff(&exact).unwrap() <= 1e-10);
    }

    #[test]
    fn gradient_layout_has_leading_axis() {
        let chart = Arc::new(Chart::open_box(2, 9, 0.0, 1.0).unwrap());
        let f = TensorField::from_node_fn(chart.clone(), vec![IndexTag::CoordUp], |_, x, out| {
            out[0] = x[0];
            out[1] = 2.0 * x[1];
        });
        let g = gradient(&f).unwrap();
        assert_eq!(g.signature(), &[IndexTag::CoordDown, IndexTag::CoordUp]);
        for node in 0..chart.num_nodes() {
            let v = g.node(node);
            assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
            assert!(v[2].abs() < 1e-12 && (v[3] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_out_of_range_is_rejected() {
        let chart = Arc::new(Chart::periodic(2, 8, 1.0).unwrap());
        let f = scalar(&chart, |_| 0.0);
        assert!(differentiate(&f, 2).is_err());
    }

    #[test]
    fn mixed_partials_commute() {
        let chart = Arc::new(Chart::periodic(2, 64, 2.0 * PI).unwrap());
        let f = scalar(&chart, |x| (x[0].sin() * x[1].cos()).exp());
        let a = differentiate(&differentiate(&f, 0).unwrap(), 1).unwrap();
        let b = differentiate(&differentiate(&f, 1).unwrap(), 0).unwrap();
        assert!(a.sup_diff(&b).unwrap() <= 1e-6);
        let chart = Arc::new(Chart::open_box(2, 64, -1.0, 1.0).unwrap());
        let f = scalar(&chart, |x| (x[0] * x[1]).sin() + x[0].exp() * x[1]);
        let a = differentiate(&differentiate(&f, 0).unwrap(), 1).unwrap();
        let b = differentiate(&differentiate(&f, 1).unwrap(), 0).unwrap();
        assert!(a.sup_diff(&b).unwrap() <= 1e-6);
    }
}

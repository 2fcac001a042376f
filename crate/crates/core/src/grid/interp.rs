//! Off-grid evaluation of sampled fields: trigonometric interpolation on periodic
//! charts, tensor-product natural cubic splines on open boxes.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::chart::ChartKind;
use super::field::TensorField;
use crate::error::{HflowError, Result};

#[derive(Debug, Clone)]
pub struct Interpolator {
    field: TensorField,
    /// Per-axis map from samples to spline second derivatives (open boxes only).
    spline: Vec<DMatrix<f64>>,
}

impl Interpolator {
    pub fn new(field: TensorField) -> Self {
        let chart = field.chart().clone();
        let spline = match chart.kind() {
            ChartKind::PeriodicBox => Vec::new(),
            ChartKind::OpenBox => (0..chart.dim())
                .map(|a| spline_second_derivative_map(chart.resolution()[a], chart.spacing(a)))
                .collect(),
        };
        Self { field, spline }
    }

    pub fn field(&self) -> &TensorField {
        &self.field
    }

    fn axis_weights(&self, axis: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
        let chart = self.field.chart();
        let len = chart.resolution()[axis];
        let h = chart.spacing(axis);
        match chart.kind() {
            ChartKind::PeriodicBox => {
                let length = chart.extent(axis);
                let scale = 2.0 * PI / length;
                let half = (len - 1) / 2;
                let even = len % 2 == 0;
                let mut w = vec![0.0; len];
                let mut dw = vec![0.0; len];
                for j in 0..len {
                    let d = x - chart.coordinate(axis, j);
                    let mut s = 1.0;
                    let mut ds = 0.0;
                    for m in 1..=half {
                        let k = m as f64 * scale;
                        s += 2.0 * (k * d).cos();
                        ds -= 2.0 * k * (k * d).sin();
                    }
                    if even {
                        let k = (len / 2) as f64 * scale;
                        s += (k * d).cos();
                        ds -= k * (k * d).sin();
                    }
                    w[j] = s / len as f64;
                    dw[j] = ds / len as f64;
                }
                (w, dw)
            }
            ChartKind::OpenBox => {
                let t_abs = (x - chart.lower()[axis]) / h;
                let i = (t_abs.floor().max(0.0) as usize).min(len - 2);
                let t = t_abs - i as f64;
                let (a, b) = (1.0 - t, t);
                let s = &self.spline[axis];
                let c = (a * a * a - a) * h * h / 6.0;
                let d = (b * b * b - b) * h * h / 6.0;
                let dc = (1.0 - 3.0 * a * a) * h / 6.0;
                let dd = (3.0 * b * b - 1.0) * h / 6.0;
                let mut w = vec![0.0; len];
                let mut dw = vec![0.0; len];
                for j in 0..len {
                    w[j] = c * s[(i, j)] + d * s[(i + 1, j)];
                    dw[j] = dc * s[(i, j)] + dd * s[(i + 1, j)];
                }
                w[i] += a;
                w[i + 1] += b;
                dw[i] -= 1.0 / h;
                dw[i + 1] += 1.0 / h;
                (w, dw)
            }
        }
    }

    /// Interpolated components at `x`.
    pub fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        let chart = self.field.chart();
        if !chart.contains(x) {
            return Err(HflowError::OutsideChart(x.to_vec()));
        }
        let weights: Vec<Vec<f64>> = (0..chart.dim()).map(|a| self.axis_weights(a, x[a]).0).collect();
        Ok(self.contract(weights.iter().map(|w| w.as_slice())))
    }

    /// Interpolated components at `x` and their gradient (`grad[r * comps + c]`).
    pub fn eval(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let chart = self.field.chart();
        let n = chart.dim();
        if !chart.contains(x) {
            return Err(HflowError::OutsideChart(x.to_vec()));
        }
        let weights: Vec<(Vec<f64>, Vec<f64>)> = (0..n).map(|a| self.axis_weights(a, x[a])).collect();
        let comps = self.field.components();
        let value = self.contract(weights.iter().map(|w| w.0.as_slice()));
        let mut grad = vec![0.0; n * comps];
        for r in 0..n {
            let g = self.contract(
                weights
                    .iter()
                    .enumerate()
                    .map(|(a, w)| if a == r { w.1.as_slice() } else { w.0.as_slice() }),
            );
            grad[r * comps..(r + 1) * comps].copy_from_slice(&g);
        }
        Ok((value, grad))
    }
}

impl Interpolator {
    /// Contracts the node axes, leading axis first, with one weight vector each.
    fn contract<'w>(&self, weights: impl Iterator<Item = &'w [f64]>) -> Vec<f64> {
        let mut owned: Option<Vec<f64>> = None;
        for w in weights {
            let cur = owned.as_deref().unwrap_or(self.field.data());
            let rest = cur.len() / w.len();
            let mut out = vec![0.0; rest];
            for (i, &wi) in w.iter().enumerate() {
                if wi == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(&cur[i * rest..(i + 1) * rest]) {
                    *o += wi * v;
                }
            }
            owned = Some(out);
        }
        owned.unwrap_or_else(|| self.field.data().to_vec())
    }
}

/// Matrix `S` with `M = S f` giving natural-spline second derivatives from samples.
fn spline_second_derivative_map(len: usize, h: f64) -> DMatrix<f64> {
    let m = len - 2;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DMatrix::<f64>::zeros(m, len);
    for i in 0..m {
        a[(i, i)] = 4.0;
        if i > 0 {
            a[(i, i - 1)] = 1.0;
        }
        if i + 1 < m {
            a[(i, i + 1)] = 1.0;
        }
        let s = 6.0 / (h * h);
        b[(i, i)] = s;
        b[(i, i + 1)] = -2.0 * s;
        b[(i, i + 2)] = s;
    }
    let inner = a.lu().solve(&b).expect("spline system is diagonally dominant");
    let mut full = DMatrix::<f64>::zeros(len, len);
    full.rows_mut(1, m).copy_from(&inner);
    full
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::chart::Chart;
    use std::sync::Arc;

    #[test]
    fn trig_interpolation_reproduces_band_limited_data() {
        let chart = Arc::new(Chart::periodic(2, 16, 2.0 * PI).unwrap());
        let f = TensorField::from_node_fn(chart, vec![], |_, x, out| out[0] = (2.0 * x[0]).sin() + x[1].cos());
        let it = Interpolator::new(f);
        let (v, g) = it.eval(&[0.37, 1.91]).unwrap();
        assert!((v[0] - ((0.74f64).sin() + 1.91f64.cos())).abs() < 1e-12);
        assert!((g[0] - 2.0 * 0.74f64.cos()).abs() < 1e-11);
        assert!((g[1] + 1.91f64.sin()).abs() < 1e-11);
    }

    #[test]
    fn spline_matches_nodes_and_smooth_data() {
        let chart = Arc::new(Chart::open_box(2, 33, -1.0, 1.0).unwrap());
        let f = TensorField::from_node_fn(chart.clone(), vec![], |_, x, out| out[0] = (x[0] * x[1]).sin());
        let it = Interpolator::new(f.clone());
        let node = 400;
        let (v, _) = it.eval(&chart.coordinates(node)).unwrap();
        assert!((v[0] - f.node(node)[0]).abs() < 1e-13);
        let p = [0.123, -0.456];
        let (v, g) = it.eval(&p).unwrap();
        assert!((v[0] - (p[0] * p[1]).sin()).abs() < 1e-5);
        assert!((g[0] - p[1] * (p[0] * p[1]).cos()).abs() < 1e-3);
    }

    #[test]
    fn outside_open_box_is_an_error() {
        let chart = Arc::new(Chart::open_box(1, 9, 0.0, 1.0).unwrap());
        let it = Interpolator::new(TensorField::zeros(chart, vec![]));
        assert!(matches!(it.eval(&[1.5]), Err(HflowError::OutsideChart(_))));
    }
}

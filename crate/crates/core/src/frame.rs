//! Frame fields `ε(𝟘,x)`, their inverses, and gauge fields.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use crate::catalog::MatrixFormula;
use crate::error::{HflowError, Result};
use crate::grid::{gradient, Chart, IndexTag, Interpolator, TensorField};

/// Frames with `|det|` below this at any node are rejected as singular.
pub const DET_FLOOR: f64 = 1e-8;

pub const FRAME_SIGNATURE: [IndexTag; 2] = [IndexTag::CoordUp, IndexTag::RnDown];
pub const COFRAME_SIGNATURE: [IndexTag; 2] = [IndexTag::RnUp, IndexTag::CoordDown];
pub const GAUGE_SIGNATURE: [IndexTag; 2] = [IndexTag::CoordUp, IndexTag::CoordDown];

pub(crate) fn mat(n: usize, s: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, s)
}

pub(crate) fn write_mat(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
}

#[derive(Debug, Clone)]
pub enum FrameBacking {
    /// Closed-form entries with exact first and second derivatives.
    Analytic(MatrixFormula),
    /// Grid values; derivatives come from the chart's differentiation scheme.
    Sampled(TensorField),
}

/// Value, gradient and (when available) Hessian of a frame at every node.
#[derive(Debug, Clone)]
pub struct FrameJets {
    /// `[i, a]`: ε_a^i(𝟘,x).
    pub value: TensorField,
    /// `[r, i, a]`: ∂_r ε_a^i.
    pub grad: TensorField,
    /// `[r, j, i, a]`: ∂_r ∂_j ε_a^i.
    pub hessian: Option<TensorField>,
}

/// The splitting restricted to the base point: an invertible matrix `ε_a^i(𝟘,x)`
/// at every point, `i` a coordinate index and `a` an ℝⁿ index.
#[derive(Debug)]
pub struct FrameField {
    chart: Arc<Chart>,
    backing: FrameBacking,
    interp: OnceLock<Interpolator>,
}

impl Clone for FrameField {
    fn clone(&self) -> Self {
        Self {
            chart: self.chart.clone(),
            backing: self.backing.clone(),
            interp: OnceLock::new(),
        }
    }
}

impl FrameField {
    pub fn analytic(chart: Arc<Chart>, formula: MatrixFormula) -> Result<Self> {
        if formula.dim() != chart.dim() || formula.shape() != (chart.dim(), chart.dim()) {
            return Err(HflowError::ShapeMismatch(format!(
                "formula of dimension {} does not fit a {}-dimensional chart",
                formula.dim(),
                chart.dim()
            )));
        }
        let frame = Self {
            chart,
            backing: FrameBacking::Analytic(formula),
            interp: OnceLock::new(),
        };
        frame.check_invertible()?;
        Ok(frame)
    }

    pub fn sampled(values: TensorField) -> Result<Self> {
        if values.signature() != FRAME_SIGNATURE {
            return Err(HflowError::IllegalIndex(format!(
                "frame values need signature {FRAME_SIGNATURE:?}, got {:?}",
                values.signature()
            )));
        }
        if !values.is_finite() {
            return Err(HflowError::Format("frame contains non-finite values".into()));
        }
        let frame = Self {
            chart: values.chart().clone(),
            backing: FrameBacking::Sampled(values),
            interp: OnceLock::new(),
        };
        frame.check_invertible()?;
        Ok(frame)
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn backing(&self) -> &FrameBacking {
        &self.backing
    }

    pub fn formula(&self) -> Option<&MatrixFormula> {
        match &self.backing {
            FrameBacking::Analytic(f) => Some(f),
            FrameBacking::Sampled(_) => None,
        }
    }

    pub fn is_analytic(&self) -> bool {
        self.formula().is_some()
    }

    /// Same frame re-backed by its grid samples.
    pub fn to_sampled(&self) -> Result<Self> {
        Self::sampled(self.values())
    }

    pub fn values(&self) -> TensorField {
        match &self.backing {
            FrameBacking::Sampled(v) => v.clone(),
            FrameBacking::Analytic(f) => {
                TensorField::from_node_fn(self.chart.clone(), FRAME_SIGNATURE.to_vec(), |_, x, out| {
                    write_mat(&f.value(x), out)
                })
            }
        }
    }

    /// Frame jets. Sampled frames only get a Hessian when `with_hessian` is set,
    /// and then it comes from repeated grid differentiation.
    pub fn jets(&self, with_hessian: bool) -> Result<FrameJets> {
        let n = self.dim();
        match &self.backing {
            FrameBacking::Analytic(f) => {
                let nn = n * n;
                let mut grad = TensorField::zeros(
                    self.chart.clone(),
                    vec![IndexTag::CoordDown, IndexTag::CoordUp, IndexTag::RnDown],
                );
                let mut hess = TensorField::zeros(
                    self.chart.clone(),
                    vec![IndexTag::CoordDown, IndexTag::CoordDown, IndexTag::CoordUp, IndexTag::RnDown],
                );
                let jets: Vec<_> = {
                    use rayon::prelude::*;
                    (0..self.chart.num_nodes())
                        .into_par_iter()
                        .map(|node| f.jet(&self.chart.coordinates(node)))
                        .collect()
                };
                let mut value = TensorField::zeros(self.chart.clone(), FRAME_SIGNATURE.to_vec());
                for (node, jet) in jets.iter().enumerate() {
                    write_mat(&jet.value, value.node_mut(node));
                    let g = grad.node_mut(node);
                    for r in 0..n {
                        write_mat(&jet.d[r], &mut g[r * nn..(r + 1) * nn]);
                    }
                    let h = hess.node_mut(node);
                    for rj in 0..nn {
                        write_mat(&jet.dd[rj], &mut h[rj * nn..(rj + 1) * nn]);
                    }
                }
                Ok(FrameJets {
                    value,
                    grad,
                    hessian: Some(hess),
                })
            }
            FrameBacking::Sampled(v) => {
                let grad = gradient(v)?;
                let hessian = if with_hessian { Some(gradient(&grad)?) } else { None };
                Ok(FrameJets {
                    value: v.clone(),
                    grad,
                    hessian,
                })
            }
        }
    }

    pub fn min_abs_det(&self) -> f64 {
        let n = self.dim();
        let v = self.values();
        (0..v.num_nodes())
            .map(|node| mat(n, v.node(node)).determinant().abs())
            .fold(f64::INFINITY, f64::min)
    }

    fn check_invertible(&self) -> Result<()> {
        let n = self.dim();
        let v = self.values();
        for node in 0..v.num_nodes() {
            let det = mat(n, v.node(node)).determinant();
            if !(det.abs() > DET_FLOOR) {
                return Err(HflowError::SingularFrame { node, det });
            }
        }
        Ok(())
    }

    /// Frame value at an arbitrary point of the chart.
    pub fn value_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if !self.chart.contains(x) {
            return Err(HflowError::OutsideChart(x.to_vec()));
        }
        match &self.backing {
            FrameBacking::Analytic(f) => Ok(f.value(x)),
            FrameBacking::Sampled(v) => {
                let values = self.interp.get_or_init(|| Interpolator::new(v.clone()));
                Ok(mat(self.dim(), &values.value(x)?))
            }
        }
    }

    /// Frame value and partial derivatives at an arbitrary point of the chart.
    pub fn eval_at(&self, x: &[f64]) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        if !self.chart.contains(x) {
            return Err(HflowError::OutsideChart(x.to_vec()));
        }
        let n = self.dim();
        match &self.backing {
            FrameBacking::Analytic(f) => {
                let jet = f.first_jet(x);
                Ok((jet.value, jet.d))
            }
            FrameBacking::Sampled(v) => {
                let values = self.interp.get_or_init(|| Interpolator::new(v.clone()));
                // derivative of the interpolant, not an interpolated grid derivative
                let (val, grad) = values.eval(x)?;
                let nn = n * n;
                let d = (0..n).map(|r| mat(n, &grad[r * nn..(r + 1) * nn])).collect();
                Ok((mat(n, &val), d))
            }
        }
    }
}

/// Pointwise inverse of a rank-2 matrix field.
///
/// Tags swap as for a dual object: a `[X-up, Y-down]` field inverts to
/// `[Y-up, X-down]`, so `ε(𝟘,x)` becomes `ε(x,𝟘)` and vice versa.
pub fn invert_matrix_field(field: &TensorField) -> Result<TensorField> {
    let sig = field.signature();
    if sig.len() != 2 || !sig[0].is_upper() || sig[1].is_upper() {
        return Err(HflowError::IllegalIndex(format!("cannot invert a field with signature {sig:?}")));
    }
    let up = |t: IndexTag| if t.is_coordinate() { IndexTag::CoordUp } else { IndexTag::RnUp };
    let down = |t: IndexTag| if t.is_coordinate() { IndexTag::CoordDown } else { IndexTag::RnDown };
    let new_sig = vec![up(sig[1]), down(sig[0])];
    let n = field.dim();
    TensorField::try_from_node_fn(field.chart().clone(), new_sig, |node, _, out| {
        let m = mat(n, field.node(node));
        let det = m.determinant();
        if !(det.abs() > DET_FLOOR) {
            return Err(HflowError::SingularFrame { node, det });
        }
        let inv = m.try_inverse().ok_or(HflowError::SingularFrame { node, det })?;
        write_mat(&inv, out);
        Ok(())
    })
}

/// `ε(x,𝟘)`: the pointwise inverse of the frame.
pub fn invert_frame(frame: &FrameField) -> Result<TensorField> {
    invert_matrix_field(&frame.values())
}

/// Gauge transformation: an invertible linear map of each tangent space.
#[derive(Debug, Clone)]
pub struct GaugeField {
    pub formula: Option<MatrixFormula>,
    /// `[i, j]`: 𝔞_j^i, both coordinate indices.
    pub values: TensorField,
}

impl GaugeField {
    pub fn analytic(chart: Arc<Chart>, formula: MatrixFormula) -> Result<Self> {
        let values = TensorField::from_node_fn(chart, GAUGE_SIGNATURE.to_vec(), |_, x, out| {
            write_mat(&formula.value(x), out)
        });
        // inversion doubles as the invertibility check
        invert_matrix_field(&values)?;
        Ok(Self {
            formula: Some(formula),
            values,
        })
    }

    pub fn sampled(values: TensorField) -> Result<Self> {
        if values.signature() != GAUGE_SIGNATURE {
            return Err(HflowError::IllegalIndex("gauge fields carry two coordinate indices".into()));
        }
        invert_matrix_field(&values)?;
        Ok(Self { formula: None, values })
    }

    pub fn identity(chart: Arc<Chart>) -> Self {
        let n = chart.dim();
        Self::analytic(chart, MatrixFormula::identity(n)).expect("identity is invertible")
    }

    /// `𝔟 = 𝔞⁻¹`.
    pub fn inverse(&self) -> TensorField {
        invert_matrix_field(&self.values).expect("checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin;

    #[test]
    fn identity_inverts_to_identity() {
        let chart = Arc::new(Chart::periodic(2, 8, 1.0).unwrap());
        let f = FrameField::analytic(chart, MatrixFormula::identity(2)).unwrap();
        let inv = invert_frame(&f).unwrap();
        assert_eq!(inv.signature(), COFRAME_SIGNATURE);
        assert!(inv.sub(&f.values().with_signature(COFRAME_SIGNATURE.to_vec()).unwrap()).unwrap().sup() == 0.0);
    }

    #[test]
    fn diagonal_two_inverts_to_half() {
        let chart = Arc::new(Chart::periodic(3, 8, 1.0).unwrap());
        let f = FrameField::analytic(
            chart,
            MatrixFormula::Constant {
                n: 3,
                value: DMatrix::identity(3, 3) * 2.0,
            },
        )
        .unwrap();
        let inv = invert_frame(&f).unwrap();
        for node in [0, 100, 511] {
            let m = mat(3, inv.node(node));
            assert!((m - DMatrix::identity(3, 3) * 0.5).amax() == 0.0);
        }
    }

    #[test]
    fn heisenberg_inverse_has_minus_x() {
        let r = builtin("heisenberg").unwrap();
        let chart = r.default_chart(8).unwrap();
        let f = FrameField::analytic(chart.clone(), r.formula).unwrap();
        let inv = invert_frame(&f).unwrap();
        for node in [3, 77, 300] {
            let x = chart.coordinates(node);
            let m = mat(3, inv.node(node));
            let mut expected = DMatrix::identity(3, 3);
            expected[(2, 1)] = -x[0];
            assert!((m - expected).amax() < 1e-15);
        }
    }

    #[test]
    fn singular_frame_names_the_node() {
        let chart = Arc::new(Chart::open_box(1, 9, -1.0, 1.0).unwrap());
        let values = TensorField::from_node_fn(chart, FRAME_SIGNATURE.to_vec(), |_, x, out| out[0] = x[0]);
        match FrameField::sampled(values) {
            Err(HflowError::SingularFrame { node, .. }) => assert_eq!(node, 4),
            other => panic!("expected singular frame, got {other:?}"),
        }
    }

    #[test]
    fn double_inversion_is_identity() {
        let chart = Arc::new(Chart::periodic(2, 16, 2.0 * std::f64::consts::PI).unwrap());
        let r = crate::catalog::perturbation(4, 0.3, 2, &chart).unwrap();
        let f = FrameField::analytic(chart, r.formula).unwrap();
        let v = f.values();
        let back = invert_matrix_field(&invert_matrix_field(&v).unwrap()).unwrap();
        assert_eq!(back.signature(), v.signature());
        assert!(back.sup_diff(&v).unwrap() <= 1e-12);
    }

    #[test]
    fn frame_times_inverse_is_identity() {
        let chart = Arc::new(Chart::periodic(3, 8, 2.0 * std::f64::consts::PI).unwrap());
        let r = crate::catalog::perturbation(1, 0.4, 1, &chart).unwrap();
        let f = FrameField::analytic(chart, r.formula).unwrap();
        let (v, inv) = (f.values(), invert_frame(&f).unwrap());
        for node in 0..v.num_nodes() {
            let p = mat(3, v.node(node)) * mat(3, inv.node(node));
            assert!((p - DMatrix::identity(3, 3)).amax() <= 1e-12);
        }
    }
}

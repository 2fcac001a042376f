//! Closed-form matrix fields with exact first and second partial derivatives.

use std::f64::consts::PI;

use nalgebra::DMatrix;

/// Value and partial derivatives of a matrix field at one point.
///
/// `d[r]` is `∂_r M`; `dd[r * n + j]` is `∂_r ∂_j M`. Lower-order jets leave
/// `dd`, or both `d` and `dd`, empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MatJet {
    pub value: DMatrix<f64>,
    pub d: Vec<DMatrix<f64>>,
    pub dd: Vec<DMatrix<f64>>,
}

impl MatJet {
    pub fn constant(value: DMatrix<f64>, n: usize) -> Self {
        Self::constant_to_order(value, n, 2)
    }

    fn constant_to_order(value: DMatrix<f64>, n: usize, order: usize) -> Self {
        let z = DMatrix::zeros(value.nrows(), value.ncols());
        Self {
            d: if order >= 1 { vec![z.clone(); n] } else { Vec::new() },
            dd: if order >= 2 { vec![z; n * n] } else { Vec::new() },
            value,
        }
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn product(&self, other: &MatJet) -> MatJet {
        let n = self.dim();
        let value = &self.value * &other.value;
        let d = (0..n).map(|r| &self.d[r] * &other.value + &self.value * &other.d[r]).collect();
        let mut dd = Vec::with_capacity(n * n);
        for r in (0..n).filter(|_| !self.dd.is_empty()) {
            for j in 0..n {
                dd.push(
                    &self.dd[r * n + j] * &other.value
                        + &self.d[r] * &other.d[j]
                        + &self.d[j] * &other.d[r]
                        + &self.value * &other.dd[r * n + j],
                );
            }
        }
        MatJet { value, d, dd }
    }

    pub fn scaled(&self, s: f64) -> MatJet {
        MatJet {
            value: &self.value * s,
            d: self.d.iter().map(|m| m * s).collect(),
            dd: self.dd.iter().map(|m| m * s).collect(),
        }
    }

    pub fn plus(&self, other: &MatJet) -> MatJet {
        MatJet {
            value: &self.value + &other.value,
            d: self.d.iter().zip(&other.d).map(|(a, b)| a + b).collect(),
            dd: self.dd.iter().zip(&other.dd).map(|(a, b)| a + b).collect(),
        }
    }

    /// Jet of `exp(M)` by scaling, a truncated Taylor series, and squaring.
    pub fn exp(&self) -> MatJet {
        let norm = self.value.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * self.value.nrows() as f64;
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let scaled = self.scaled(0.5_f64.powi(squarings));
        let mut result = exp_series(&scaled);
        for _ in 0..squarings {
            result = result.product(&result);
        }
        result
    }

    fn max_abs(&self) -> f64 {
        std::iter::once(&self.value)
            .chain(&self.d)
            .chain(&self.dd)
            .flat_map(|m| m.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn exp_series(a: &MatJet) -> MatJet {
    let n = a.dim();
    let size = a.value.nrows();
    let order = if a.dd.is_empty() { usize::from(n > 0) } else { 2 };
    let mut term = MatJet::constant_to_order(DMatrix::identity(size, size), n, order);
    let mut sum = term.clone();
    // |A| <= 1/2 here, so 40 terms push the remainder far below 1e-12
    for m in 1..=40 {
        let prev = term;
        let inv = 1.0 / m as f64;
        let value = &a.value * &prev.value * inv;
        let d: Vec<_> = (0..n)
            .map(|r| (&a.d[r] * &prev.value + &a.value * &prev.d[r]) * inv)
            .collect();
        let mut dd = Vec::with_capacity(n * n);
        for r in (0..n).filter(|_| order >= 2) {
            for j in 0..n {
                dd.push(
                    (&a.dd[r * n + j] * &prev.value
                        + &a.d[r] * &prev.d[j]
                        + &a.d[j] * &prev.d[r]
                        + &a.value * &prev.dd[r * n + j])
                        * inv,
                );
            }
        }
        term = MatJet { value, d, dd };
        sum = sum.plus(&term);
        if term.max_abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// One Fourier mode of a trigonometric polynomial matrix field.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigMode {
    /// Integer wave vector.
    pub k: Vec<i32>,
    pub cos: DMatrix<f64>,
    pub sin: DMatrix<f64>,
}

/// Matrix field given in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFormula {
    Constant { n: usize, value: DMatrix<f64> },
    /// Identity except entry (row 3, col 2) = x¹ (1-based).
    Heisenberg,
    /// `diag(1, exp(x¹))`.
    Affine,
    /// `diag(1 / (1 + a cos x^i))`: the abelian frame pulled back by a coordinate warp.
    Warped { n: usize, amplitude: f64 },
    /// `Σ_m C_m cos(k_m·θ) + S_m sin(k_m·θ)` with `θ_a = 2π (x_a - origin_a) / period_a`.
    Trig {
        n: usize,
        origin: Vec<f64>,
        period: Vec<f64>,
        modes: Vec<TrigMode>,
    },
    Exp(Box<MatrixFormula>),
    Product(Box<MatrixFormula>, Box<MatrixFormula>),
    Sum(Box<MatrixFormula>, Box<MatrixFormula>),
    Scaled(f64, Box<MatrixFormula>),
}

impl MatrixFormula {
    pub fn identity(n: usize) -> Self {
        MatrixFormula::Constant {
            n,
            value: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MatrixFormula::Constant { n, .. } | MatrixFormula::Warped { n, .. } | MatrixFormula::Trig { n, .. } => *n,
            MatrixFormula::Heisenberg => 3,
            MatrixFormula::Affine => 2,
            MatrixFormula::Exp(a) | MatrixFormula::Scaled(_, a) => a.dim(),
            MatrixFormula::Product(a, _) | MatrixFormula::Sum(a, _) => a.dim(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatrixFormula::Constant { value, .. } => value.shape(),
            MatrixFormula::Heisenberg => (3, 3),
            MatrixFormula::Affine => (2, 2),
            MatrixFormula::Warped { n, .. } => (*n, *n),
            MatrixFormula::Trig { modes, n, .. } => modes.first().map(|m| m.cos.shape()).unwrap_or((*n, *n)),
            MatrixFormula::Exp(a) | MatrixFormula::Scaled(_, a) | MatrixFormula::Sum(a, _) => a.shape(),
            MatrixFormula::Product(a, b) => (a.shape().0, b.shape().1),
        }
    }

    pub fn product(a: MatrixFormula, b: MatrixFormula) -> Self {
        MatrixFormula::Product(Box::new(a), Box::new(b))
    }

    pub fn sum(a: MatrixFormula, b: MatrixFormula) -> Self {
        MatrixFormula::Sum(Box::new(a), Box::new(b))
    }

    pub fn scaled(s: f64, a: MatrixFormula) -> Self {
        MatrixFormula::Scaled(s, Box::new(a))
    }

    pub fn exp(a: MatrixFormula) -> Self {
        MatrixFormula::Exp(Box::new(a))
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        self.jet_to_order(x, 0).value
    }

    /// Value and first derivatives only.
    pub fn first_jet(&self, x: &[f64]) -> MatJet {
        self.jet_to_order(x, 1)
    }

    pub fn jet(&self, x: &[f64]) -> MatJet {
        self.jet_to_order(x, 2)
    }

    fn jet_to_order(&self, x: &[f64], order: usize) -> MatJet {
        let n = self.dim();
        let (first, second) = (order >= 1, order >= 2);
        let constant = |value: DMatrix<f64>| MatJet::constant_to_order(value, n, order);
        match self {
            MatrixFormula::Constant { value, .. } => constant(value.clone()),
            MatrixFormula::Heisenberg => {
                let mut jet = constant(DMatrix::identity(3, 3));
                jet.value[(2, 1)] = x[0];
                if first {
                    jet.d[0][(2, 1)] = 1.0;
                }
                jet
            }
            MatrixFormula::Affine => {
                let e = x[0].exp();
                let mut jet = constant(DMatrix::identity(2, 2));
                jet.value[(1, 1)] = e;
                if first {
                    jet.d[0][(1, 1)] = e;
                }
                if second {
                    jet.dd[0][(1, 1)] = e;
                }
                jet
            }
            MatrixFormula::Warped { amplitude, .. } => {
                let mut jet = constant(DMatrix::zeros(n, n));
                for a in 0..n {
                    let (s, c) = x[a].sin_cos();
                    let den = 1.0 + amplitude * c;
                    jet.value[(a, a)] = 1.0 / den;
                    // d/dx (1/den) = a sin / den^2 ; second derivative by the quotient rule
                    if first {
                        jet.d[a][(a, a)] = amplitude * s / (den * den);
                    }
                    if second {
                        jet.dd[a * n + a][(a, a)] =
                            amplitude * c / (den * den) + 2.0 * amplitude * amplitude * s * s / (den * den * den);
                    }
                }
                jet
            }
            MatrixFormula::Trig {
                origin,
                period,
                modes,
                ..
            } => {
                let (rows, cols) = self.shape();
                let mut jet = constant(DMatrix::zeros(rows, cols));
                for mode in modes {
                    let kvec: Vec<f64> = (0..n).map(|a| 2.0 * PI * mode.k[a] as f64 / period[a]).collect();
                    let phase: f64 = (0..n).map(|a| kvec[a] * (x[a] - origin[a])).sum();
                    let (s, c) = phase.sin_cos();
                    let v = &mode.cos * c + &mode.sin * s;
                    jet.value += &v;
                    if first {
                        let dv = &mode.sin * c - &mode.cos * s;
                        for r in 0..n {
                            jet.d[r] += &dv * kvec[r];
                        }
                    }
                    if second {
                        for r in 0..n {
                            for j in 0..n {
                                jet.dd[r * n + j] -= &v * (kvec[r] * kvec[j]);
                            }
                        }
                    }
                }
                jet
            }
            MatrixFormula::Exp(a) => a.jet_to_order(x, order).exp(),
            MatrixFormula::Product(a, b) => a.jet_to_order(x, order).product(&b.jet_to_order(x, order)),
            MatrixFormula::Sum(a, b) => a.jet_to_order(x, order).plus(&b.jet_to_order(x, order)),
            MatrixFormula::Scaled(s, a) => a.jet_to_order(x, order).scaled(*s),
        }
    }

    /// Largest discrepancy between the supplied derivatives and central differences
    /// of the supplied values (first derivatives) and first derivatives (second).
    pub fn derivative_self_check(&self, points: &[Vec<f64>], step: f64) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for x in points {
            let jet = self.jet(x);
            for r in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[r] += step;
                xm[r] -= step;
                let (jp, jm) = (self.jet(&xp), self.jet(&xm));
                let fd = (&jp.value - &jm.value) / (2.0 * step);
                worst = worst.max((fd - &jet.d[r]).amax());
                for j in 0..n {
                    let fd2 = (&jp.d[j] - &jm.d[j]) / (2.0 * step);
                    worst = worst.max((fd2 - &jet.dd[r * n + j]).amax());
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trig_example() -> MatrixFormula {
        MatrixFormula::Trig {
            n: 2,
            origin: vec![0.0, 0.0],
            period: vec![2.0 * PI, 2.0 * PI],
            modes: vec![
                TrigMode {
                    k: vec![1, 0],
                    cos: DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.0]),
                    sin: DMatrix::from_row_slice(2, 2, &[0.0, 0.4, -0.2, 0.1]),
                },
                TrigMode {
                    k: vec![1, -2],
                    cos: DMatrix::from_row_slice(2, 2, &[0.1, 0.1, 0.0, -0.3]),
                    sin: DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.3, 0.1]),
                },
            ],
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let pts = vec![vec![0.3, -0.2], vec![1.7, 2.9]];
        for f in [
            trig_example(),
            MatrixFormula::exp(trig_example()),
            MatrixFormula::exp(MatrixFormula::scaled(6.0, trig_example())),
            MatrixFormula::Affine,
            MatrixFormula::Warped { n: 2, amplitude: 0.3 },
            MatrixFormula::product(MatrixFormula::Affine, MatrixFormula::exp(trig_example())),
        ] {
            assert!(f.derivative_self_check(&pts, 1e-5) < 1e-6, "{f:?}");
        }
    }

    #[test]
    fn exp_matches_nalgebra_exponential() {
        let x = [0.4, 1.1];
        let a = MatrixFormula::scaled(5.0, trig_example());
        let ours = MatrixFormula::exp(a.clone()).value(&x);
        let reference = a.value(&x).exp();
        assert!((ours - reference).amax() < 1e-12);
    }

    #[test]
    fn heisenberg_entry_layout() {
        let e = MatrixFormula::Heisenberg.value(&[0.7, 0.0, 0.0]);
        assert_eq!(e[(2, 1)], 0.7);
        assert_eq!(e.trace(), 3.0);
    }
}

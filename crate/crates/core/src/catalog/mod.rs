//! Reproducible analytic frames: concrete local Lie groups and seeded generic
//! perturbations.

pub mod formula;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HflowError, Result};
use crate::grid::{Chart, ChartKind};
pub use formula::{MatJet, MatrixFormula, TrigMode};

/// Tolerance of the derivative self-check run when a recipe is built.
pub const SELF_CHECK_TOLERANCE: f64 = 1e-6;

/// Flags a recipe promises about its invariants; `None` means "no claim".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpectedInvariants {
    pub algebroid_flat: Option<bool>,
    pub torsion_free: Option<bool>,
    pub stationary: Option<bool>,
}

/// Domain a recipe must be evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartRequirement {
    pub kind: ChartKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ChartRequirement {
    pub fn chart(&self, resolution: usize) -> Result<Chart> {
        Chart::new(self.kind, vec![resolution; self.lower.len()], self.lower.clone(), self.upper.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecipe {
    pub name: String,
    pub dim: usize,
    pub chart: ChartRequirement,
    pub formula: MatrixFormula,
    pub expected: ExpectedInvariants,
    pub note: String,
}

impl FrameRecipe {
    fn checked(self) -> Result<Self> {
        let probes = self.probe_points();
        let worst = self.formula.derivative_self_check(&probes, 1e-5);
        if !(worst <= SELF_CHECK_TOLERANCE) {
            return Err(HflowError::IdentityViolation {
                what: format!("derivative self-check of recipe `{}`", self.name),
                value: worst,
                tolerance: SELF_CHECK_TOLERANCE,
            });
        }
        Ok(self)
    }

    /// A few fixed interior points of the recipe's domain.
    pub fn probe_points(&self) -> Vec<Vec<f64>> {
        [0.13, 0.47, 0.81]
            .iter()
            .map(|&t| {
                (0..self.dim)
                    .map(|a| {
                        let s = (t + 0.29 * a as f64).fract();
                        self.chart.lower[a] + (0.1 + 0.8 * s) * (self.chart.upper[a] - self.chart.lower[a])
                    })
                    .collect()
            })
            .collect()
    }

    pub fn default_chart(&self, resolution: usize) -> Result<Arc<Chart>> {
        Ok(Arc::new(self.chart.chart(resolution)?))
    }
}

fn periodic_requirement(dim: usize) -> ChartRequirement {
    ChartRequirement {
        kind: ChartKind::PeriodicBox,
        lower: vec![0.0; dim],
        upper: vec![2.0 * PI; dim],
    }
}

fn box_requirement(dim: usize) -> ChartRequirement {
    ChartRequirement {
        kind: ChartKind::OpenBox,
        lower: vec![-1.0; dim],
        upper: vec![1.0; dim],
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &["abelian", "heisenberg", "affine", "warped"];

/// Built-in recipe by name. `abelian` and `warped` are two-dimensional; use
/// [`abelian`] / [`warped`] for other dimensions.
pub fn builtin(name: &str) -> Result<FrameRecipe> {
    match name {
        "abelian" => abelian(2),
        "heisenberg" => FrameRecipe {
            name: "heisenberg".into(),
            dim: 3,
            chart: box_requirement(3),
            formula: MatrixFormula::Heisenberg,
            expected: ExpectedInvariants {
                algebroid_flat: Some(true),
                torsion_free: Some(false),
                stationary: Some(true),
            },
            note: "frame columns d1, d2 + x1 d3, d3; T_12^3 = +1".into(),
        }
        .checked(),
        "affine" => FrameRecipe {
            name: "affine".into(),
            dim: 2,
            chart: box_requirement(2),
            formula: MatrixFormula::Affine,
            expected: ExpectedInvariants {
                algebroid_flat: Some(true),
                torsion_free: Some(false),
                stationary: Some(true),
            },
            note: "frame columns d1, exp(x1) d2; orientation gives T_12^2 = +1".into(),
        }
        .checked(),
        "warped" => warped(2, 0.3),
        other => Err(HflowError::UnknownRecipe(other.to_string())),
    }
}

pub fn abelian(dim: usize) -> Result<FrameRecipe> {
    FrameRecipe {
        name: "abelian".into(),
        dim,
        chart: periodic_requirement(dim),
        formula: MatrixFormula::identity(dim),
        expected: ExpectedInvariants {
            algebroid_flat: Some(true),
            torsion_free: Some(true),
            stationary: Some(true),
        },
        note: "identity frame".into(),
    }
    .checked()
}

/// Identity frame pulled back through `x ↦ x + a sin x` on each axis: locally
/// homogeneous and torsion-free, but with non-constant components.
pub fn warped(dim: usize, amplitude: f64) -> Result<FrameRecipe> {
    if !(amplitude.abs() < 1.0) {
        return Err(HflowError::Config(format!("warp amplitude {amplitude} must be below 1")));
    }
    FrameRecipe {
        name: "warped".into(),
        dim,
        chart: periodic_requirement(dim),
        formula: MatrixFormula::Warped { n: dim, amplitude },
        expected: ExpectedInvariants {
            algebroid_flat: Some(true),
            torsion_free: Some(true),
            stationary: Some(true),
        },
        note: format!("abelian frame in warped coordinates, amplitude {amplitude}"),
    }
    .checked()
}

/// Random band-limited trigonometric matrix field on `chart`, `rows × cols`.
///
/// Every entry is bounded by `amplitude`. Modes are the integer vectors with
/// `|k|_∞ ≤ bandlimit` in a half space (one representative of each `±k`).
pub fn random_trig(
    rng: &mut ChaCha8Rng,
    chart: &Chart,
    rows: usize,
    cols: usize,
    amplitude: f64,
    bandlimit: u32,
) -> MatrixFormula {
    let n = chart.dim();
    let b = bandlimit as i32;
    let mut wave_vectors = Vec::new();
    let total = (2 * b + 1).pow(n as u32);
    for flat in 0..total {
        let mut rem = flat;
        let k: Vec<i32> = (0..n)
            .map(|_| {
                let v = (rem % (2 * b + 1) as i32) - b;
                rem /= 2 * b + 1;
                v
            })
            .collect();
        if k.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0) {
            wave_vectors.push(k);
        }
    }
    let count = (2 * wave_vectors.len()).max(1) as f64;
    let coeff = amplitude / count;
    let modes = wave_vectors
        .into_iter()
        .map(|k| TrigMode {
            k,
            cos: DMatrix::from_fn(rows, cols, |_, _| coeff * rng.random_range(-1.0..=1.0)),
            sin: DMatrix::from_fn(rows, cols, |_, _| coeff * rng.random_range(-1.0..=1.0)),
        })
        .collect();
    MatrixFormula::Trig {
        n,
        origin: chart.lower().to_vec(),
        period: (0..n).map(|a| chart.extent(a)).collect(),
        modes,
    }
}

/// Seeded generic frame `exp(A(x))` with `A` a random band-limited matrix field.
pub fn perturbation(seed: u64, amplitude: f64, bandlimit: u32, chart: &Chart) -> Result<FrameRecipe> {
    if !(0.0..0.5).contains(&amplitude) {
        return Err(HflowError::Config(format!(
            "perturbation amplitude {amplitude} must lie in [0, 0.5)"
        )));
    }
    let n = chart.dim();
    let formula = if amplitude == 0.0 {
        MatrixFormula::identity(n)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MatrixFormula::exp(random_trig(&mut rng, chart, n, n, amplitude, bandlimit))
    };
    FrameRecipe {
        name: "perturbation".into(),
        dim: n,
        chart: ChartRequirement {
            kind: chart.kind(),
            lower: chart.lower().to_vec(),
            upper: chart.upper().to_vec(),
        },
        formula,
        expected: ExpectedInvariants {
            algebroid_flat: if amplitude == 0.0 { Some(true) } else { None },
            ..Default::default()
        },
        note: format!("seed={seed} amplitude={amplitude} bandlimit={bandlimit}"),
    }
    .checked()
}

/// Seeded band-limited gauge field `exp(B(x))`, invertible by construction.
pub fn random_gauge(seed: u64, amplitude: f64, bandlimit: u32, chart: &Chart) -> MatrixFormula {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.dim();
    MatrixFormula::exp(random_trig(&mut rng, chart, n, n, amplitude, bandlimit))
}

/// Seeded band-limited vector field as an `n × 1` matrix formula.
pub fn random_vector_field(seed: u64, amplitude: f64, bandlimit: u32, chart: &Chart) -> MatrixFormula {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.dim();
    let trig = random_trig(&mut rng, chart, n, 1, amplitude, bandlimit);
    let offset = MatrixFormula::Constant {
        n,
        value: DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..=1.0)),
    };
    MatrixFormula::sum(offset, trig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_is_rejected() {
        assert!(matches!(builtin("sphere"), Err(HflowError::UnknownRecipe(_))));
    }

    #[test]
    fn builtins_pass_self_check() {
        for name in BUILTIN_NAMES {
            let r = builtin(name).unwrap();
            assert_eq!(r.formula.dim(), r.dim);
        }
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let chart = Chart::periodic(2, 16, 2.0 * PI).unwrap();
        let r = perturbation(3, 0.0, 2, &chart).unwrap();
        assert_eq!(r.formula.value(&[0.3, 0.4]), DMatrix::identity(2, 2));
    }

    #[test]
    fn large_amplitude_is_rejected() {
        let chart = Chart::periodic(2, 16, 2.0 * PI).unwrap();
        assert!(perturbation(0, 0.5, 2, &chart).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let chart = Chart::periodic(2, 16, 2.0 * PI).unwrap();
        let a = perturbation(11, 0.2, 2, &chart).unwrap();
        let b = perturbation(11, 0.2, 2, &chart).unwrap();
        assert_eq!(a, b);
        let x = [1.234, 5.678];
        let bits = |m: DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.formula.value(&x)), bits(b.formula.value(&x)));
        let c = perturbation(12, 0.2, 2, &chart).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn seed_zero_perturbation_is_well_conditioned() {
        let chart = Chart::periodic(2, 64, 2.0 * PI).unwrap();
        let r = perturbation(0, 0.1, 2, &chart).unwrap();
        let min_det = (0..chart.num_nodes())
            .map(|node| r.formula.value(&chart.coordinates(node)).determinant().abs())
            .fold(f64::INFINITY, f64::min);
        assert!(min_det > 0.5, "min det {min_det}");
    }
}

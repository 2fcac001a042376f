//! Two-point splitting `ε(x,y)`, groupoid curvature `𝓡` and its linearization,
//! and developments of the frame PDE `∂f/∂x = ε(x, f(x))` along paths.

use std::fmt::Write as _;
use std::path::Path as FsPath;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HflowError, Result};
use crate::frame::{FrameField, DET_FLOOR};

#[cfg(test)]
mod tests;

/// Finite-difference steps in this module are this fraction of the largest
/// chart extent.
pub const FD_FRACTION: f64 = 1e-4;

/// Number of intervals between recorded samples of a development.
pub const DEVELOP_SAMPLES: usize = 64;

/// Step of the five-point derivative used for the development residual, as a
/// fraction of the largest chart extent.
const RESIDUAL_FRACTION: f64 = 1e-3;

fn max_extent(frame: &FrameField) -> f64 {
    let chart = frame.chart();
    (0..chart.dim()).map(|a| chart.extent(a)).fold(0.0, f64::max)
}

/// Default finite-difference step for `frame`'s chart.
pub fn default_step(frame: &FrameField) -> f64 {
    FD_FRACTION * max_extent(frame)
}

fn inverse_at(m: DMatrix<f64>, x: &[f64]) -> Result<DMatrix<f64>> {
    let det = m.determinant();
    if !(det.abs() > DET_FLOOR) {
        return Err(HflowError::IdentityViolation {
            what: format!("frame invertibility at {x:?}"),
            value: det.abs(),
            tolerance: DET_FLOOR,
        });
    }
    Ok(m.try_inverse().expect("determinant checked"))
}

/// `ε(x,y)` with its first partial derivatives in both arguments.
#[derive(Debug, Clone)]
pub struct SplittingJet {
    pub value: DMatrix<f64>,
    /// `∂_{x^r} ε(x,y)` for each `r`.
    pub dx: Vec<DMatrix<f64>>,
    /// `∂_{y^r} ε(x,y)` for each `r`.
    pub dy: Vec<DMatrix<f64>>,
}

/// `ε_j^i(x,y) = Σ_a ε_a^i(𝟘,y) ε_j^a(x,𝟘)`, evaluated off the grid.
#[derive(Debug, Clone, Copy)]
pub struct TwoPointSplitting<'a> {
    frame: &'a FrameField,
}

impl<'a> TwoPointSplitting<'a> {
    pub fn new(frame: &'a FrameField) -> Self {
        Self { frame }
    }

    pub fn frame(&self) -> &'a FrameField {
        self.frame
    }

    pub fn dim(&self) -> usize {
        self.frame.dim()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let ex = self.frame.value_at(x)?;
        let ey = self.frame.value_at(y)?;
        Ok(ey * inverse_at(ex, x)?)
    }

    pub fn eval_jet(&self, x: &[f64], y: &[f64]) -> Result<SplittingJet> {
        let (ex, dex) = self.frame.eval_at(x)?;
        let (ey, dey) = self.frame.eval_at(y)?;
        let einv = inverse_at(ex, x)?;
        let value = &ey * &einv;
        let dx = dex.iter().map(|d| -(&value * d * &einv)).collect();
        let dy = dey.iter().map(|d| d * &einv).collect();
        Ok(SplittingJet { value, dx, dy })
    }
}

/// `𝓡_jk^i(x,y) = [∂_{x^j} ε_k^i + ∂_{y^a} ε_k^i ε_j^a] − (j↔k)`, stored `[i, j, k]`.
pub fn groupoid_curvature(s: &TwoPointSplitting, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let n = s.dim();
    let jet = s.eval_jet(x, y)?;
    // half[i, j, k] = ∂_{x^j} ε_k^i + Σ_a ∂_{y^a} ε_k^i ε_j^a
    let half = |i: usize, j: usize, k: usize| {
        jet.dx[j][(i, k)] + (0..n).map(|a| jet.dy[a][(i, k)] * jet.value[(a, j)]).sum::<f64>()
    };
    let mut out = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[(i * n + j) * n + k] = half(i, j, k) - half(i, k, j);
            }
        }
    }
    Ok(out)
}

/// `d/dt 𝓡(x, x + tξ)` at `t = 0` by central differences, stored `[i, r, j]`;
/// for a smooth frame this equals `Σ_a 𝔯_rj,a^i(x) ξ^a`.
pub fn linearize_groupoid_curvature(s: &TwoPointSplitting, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    let n = s.dim();
    if xi.len() != n || x.len() != n {
        return Err(HflowError::ShapeMismatch("point and direction must match the frame dimension".into()));
    }
    let t = default_step(s.frame());
    let shift = |sign: f64| -> Vec<f64> { x.iter().zip(xi).map(|(a, b)| a + sign * t * b).collect() };
    let plus = groupoid_curvature(s, x, &shift(1.0))?;
    let minus = groupoid_curvature(s, x, &shift(-1.0))?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * t)).collect())
}

/// Piecewise-linear path through the chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    vertices: Vec<Vec<f64>>,
}

impl Path {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(HflowError::ShapeMismatch("a path needs at least two vertices".into()));
        }
        let n = vertices[0].len();
        if n == 0 || vertices.iter().any(|v| v.len() != n || v.iter().any(|c| !c.is_finite())) {
            return Err(HflowError::ShapeMismatch("path vertices must be finite and of equal dimension".into()));
        }
        Ok(Self { vertices })
    }

    /// Straight segment from `p` to `q`.
    pub fn segment(p: &[f64], q: &[f64]) -> Result<Self> {
        Self::new(vec![p.to_vec(), q.to_vec()])
    }

    /// Polygon through `vertices`, closed back to the first one.
    pub fn polygon(mut vertices: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = vertices.first().cloned() {
            vertices.push(first);
        }
        Self::new(vertices)
    }

    /// Square loop based at `p` spanning axes `a` and `b` with the given side.
    pub fn square(p: &[f64], a: usize, b: usize, side: f64) -> Result<Self> {
        if a >= p.len() || b >= p.len() || a == b {
            return Err(HflowError::IllegalIndex(format!("square loop needs two distinct axes, got {a} and {b}")));
        }
        let corner = |da: f64, db: f64| {
            let mut v = p.to_vec();
            v[a] += da;
            v[b] += db;
            v
        };
        Self::polygon(vec![corner(0.0, 0.0), corner(side, 0.0), corner(side, side), corner(0.0, side)])
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn start(&self) -> &[f64] {
        &self.vertices[0]
    }

    pub fn end(&self) -> &[f64] {
        self.vertices.last().expect("path has vertices")
    }

    fn segment_lengths(&self) -> Vec<f64> {
        self.vertices.windows(2).map(|w| distance(&w[0], &w[1])).collect()
    }

    pub fn length(&self) -> f64 {
        self.segment_lengths().iter().sum()
    }

    pub fn is_closed(&self) -> bool {
        distance(self.start(), self.end()) <= 1e-12 * (1.0 + self.length())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// One recorded point of a development.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevelopmentSample {
    /// Arclength along the path.
    pub s: f64,
    pub point: Vec<f64>,
    pub value: Vec<f64>,
    /// `max |∂f/∂x − ε(x, f(x))|` at this point.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Development {
    pub steps: usize,
    pub samples: Vec<DevelopmentSample>,
    pub terminal_value: Vec<f64>,
    /// `ε(c(end), f(end))`, the 1-jet a solution must have at the endpoint.
    pub terminal_jet: DMatrix<f64>,
    /// Supremum of the sampled residuals.
    pub residual: f64,
}

impl Development {
    /// Columns `s, c0.., f0.., residual`.
    pub fn to_csv(&self) -> String {
        let n = self.terminal_value.len();
        let mut out = String::from("s");
        for a in 0..n {
            let _ = write!(out, ",c{a}");
        }
        for a in 0..n {
            let _ = write!(out, ",f{a}");
        }
        out.push_str(",residual\n");
        for smp in &self.samples {
            let _ = write!(out, "{:e}", smp.s);
            for v in smp.point.iter().chain(&smp.value) {
                let _ = write!(out, ",{v:e}");
            }
            let _ = writeln!(out, ",{:e}", smp.residual);
        }
        out
    }

    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn continuation_error(s: f64, err: HflowError) -> HflowError {
    match err {
        HflowError::OutsideChart(x) => HflowError::ContinuationFailure {
            s,
            reason: format!("solution left the chart at {x:?}"),
        },
        other => HflowError::ContinuationFailure {
            s,
            reason: other.to_string(),
        },
    }
}

/// Classical RK4 for `df/ds = ε(c(s), f)·ċ` along `path` from `f(start) = q`.
/// Steps are shared between segments in proportion to their length.
/// `record(s, c, f)` is called at the start and after every step.
fn integrate(
    frame: &FrameField,
    path: &Path,
    q: &[f64],
    steps: usize,
    mut record: impl FnMut(f64, &[f64], &[f64]),
) -> Result<Vec<f64>> {
    let n = frame.dim();
    if path.dim() != n || q.len() != n {
        return Err(HflowError::ShapeMismatch("path and initial value must match the frame dimension".into()));
    }
    for v in path.vertices() {
        if !frame.chart().contains(v) {
            return Err(HflowError::OutsideChart(v.clone()));
        }
    }
    if !frame.chart().contains(q) {
        return Err(HflowError::OutsideChart(q.to_vec()));
    }
    let lengths = path.segment_lengths();
    let total: f64 = lengths.iter().sum();
    let mut f = DVector::from_column_slice(q);
    let mut s = 0.0;
    record(s, path.start(), q);
    for (w, &len) in path.vertices().windows(2).zip(&lengths) {
        if len == 0.0 {
            continue;
        }
        let m = ((steps as f64 * len / total).round() as usize).max(1);
        let a = DVector::from_column_slice(&w[0]);
        let b = DVector::from_column_slice(&w[1]);
        let cdot = &b - &a;
        let dt = 1.0 / m as f64;
        // ε(c, f)·ċ with ε(c, f) = E(f) E(c)⁻¹
        let rhs = |t: f64, y: &DVector<f64>, s_now: f64| -> Result<DVector<f64>> {
            let c = &a + &cdot * t;
            let ec = frame.value_at(c.as_slice()).map_err(|e| continuation_error(s_now, e))?;
            let ef = frame.value_at(y.as_slice()).map_err(|e| continuation_error(s_now, e))?;
            let v = ec.lu().solve(&cdot).ok_or_else(|| HflowError::ContinuationFailure {
                s: s_now,
                reason: "frame singular on the path".into(),
            })?;
            Ok(ef * v)
        };
        for k in 0..m {
            let t = k as f64 * dt;
            let k1 = rhs(t, &f, s)?;
            let k2 = rhs(t + 0.5 * dt, &(&f + &k1 * (0.5 * dt)), s)?;
            let k3 = rhs(t + 0.5 * dt, &(&f + &k2 * (0.5 * dt)), s)?;
            let k4 = rhs(t + dt, &(&f + &k3 * dt), s)?;
            f += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            s += len * dt;
            if !f.iter().all(|v| v.is_finite()) {
                return Err(HflowError::ContinuationFailure {
                    s,
                    reason: "solution is no longer finite".into(),
                });
            }
            if !frame.chart().contains(f.as_slice()) {
                return Err(continuation_error(s, HflowError::OutsideChart(f.as_slice().to_vec())));
            }
            let c = &a + &cdot * (t + dt);
            record(s, c.as_slice(), f.as_slice());
        }
    }
    Ok(f.as_slice().to_vec())
}

/// Terminal value of the straight-segment development from `p` (value `q`) to `x`.
fn straight_value(frame: &FrameField, p: &[f64], q: &[f64], x: &[f64], steps: usize) -> Result<Vec<f64>> {
    if distance(p, x) == 0.0 {
        return Ok(q.to_vec());
    }
    integrate(frame, &Path::segment(p, x)?, q, steps, |_, _, _| {})
}

/// `max |∂f/∂x − ε(x, f_x)|` where `∂f/∂x` comes from straight developments out
/// of `p`, differentiated by a five-point stencil.
fn residual_at(
    frame: &FrameField,
    p: &[f64],
    q: &[f64],
    x: &[f64],
    f_x: &[f64],
    steps: usize,
    scale: f64,
) -> Result<f64> {
    let n = frame.dim();
    let h = RESIDUAL_FRACTION * max_extent(frame);
    let m = ((steps as f64 * (distance(p, x) + 2.0 * h) / scale).ceil() as usize).max(2);
    let target = TwoPointSplitting::new(frame).eval(x, f_x)?;
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let at = |k: f64| -> Result<Vec<f64>> {
            let mut y = x.to_vec();
            y[j] += k * h;
            straight_value(frame, p, q, &y, m)
        };
        let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        for i in 0..n {
            let d = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
            worst = worst.max((d - target[(i, j)]).abs());
        }
    }
    Ok(worst)
}

/// Develops the solution of the frame PDE with `f(p) = q` along `path`, which
/// must start at `p`. For frames with `𝓡 ≠ 0` no solution exists and the
/// residual measures by how much the developed values fail.
pub fn develop(frame: &FrameField, p: &[f64], q: &[f64], path: &Path, steps: usize) -> Result<Development> {
    if steps == 0 {
        return Err(HflowError::Config("a development needs at least one step".into()));
    }
    if path.dim() != p.len() || distance(path.start(), p) > 1e-12 {
        return Err(HflowError::Config("the development path must start at the base point".into()));
    }
    let mut trail: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    let terminal_value = integrate(frame, path, q, steps, |s, c, f| trail.push((s, c.to_vec(), f.to_vec())))?;
    let stride = trail.len().div_ceil(DEVELOP_SAMPLES).max(1);
    let last = trail.len() - 1;
    let picked: Vec<&(f64, Vec<f64>, Vec<f64>)> = trail
        .iter()
        .enumerate()
        .filter(|(k, _)| k % stride == 0 || *k == last)
        .map(|(_, t)| t)
        .collect();
    let scale = path.length().max(f64::MIN_POSITIVE);
    let samples = picked
        .par_iter()
        .map(|(s, c, f)| {
            let residual = residual_at(frame, p, q, c, f, steps, scale).map_err(|e| match e {
                HflowError::ContinuationFailure { reason, .. } => HflowError::ContinuationFailure { s: *s, reason },
                other => other,
            })?;
            Ok(DevelopmentSample {
                s: *s,
                point: c.clone(),
                value: f.clone(),
                residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let terminal_jet = TwoPointSplitting::new(frame).eval(path.end(), &terminal_value)?;
    let residual = samples.iter().map(|s| s.residual).fold(0.0, f64::max);
    Ok(Development {
        steps,
        samples,
        terminal_value,
        terminal_jet,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monodromy {
    pub base: Vec<f64>,
    pub initial_value: Vec<f64>,
    pub steps: usize,
    pub terminal_value: Vec<f64>,
    /// `f(end) − f(start)`.
    pub displacement: Vec<f64>,
    pub terminal_jet: DMatrix<f64>,
    /// `max |Df(end) − Df(start)|`.
    pub jet_deviation: f64,
}

impl Monodromy {
    pub fn displacement_norm(&self) -> f64 {
        self.displacement.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn report(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
        let mut out = String::new();
        let _ = writeln!(out, "base: [{}]", fmt(&self.base));
        let _ = writeln!(out, "initial value: [{}]", fmt(&self.initial_value));
        let _ = writeln!(out, "steps: {}", self.steps);
        let _ = writeln!(out, "terminal value: [{}]", fmt(&self.terminal_value));
        let _ = writeln!(out, "displacement: [{}]", fmt(&self.displacement));
        let _ = writeln!(out, "displacement norm: {:e}", self.displacement_norm());
        let _ = writeln!(out, "jet deviation: {:e}", self.jet_deviation);
        out
    }
}

/// Develops the identity jet at the loop's base point once around the loop.
///
/// The identity map always solves the frame PDE, so this probe is trivial up
/// to integration error; [`monodromy_from`] starts from another value.
pub fn monodromy(frame: &FrameField, lp: &Path, steps: usize) -> Result<Monodromy> {
    monodromy_from(frame, lp, &lp.start().to_vec(), steps)
}

/// Develops the solution with `p ↦ q` once around a loop based at `p`.
/// Displacement is `f(end) − q`; the jet deviation compares `ε(p, f(end))`
/// with the starting jet `ε(p, q)`.
pub fn monodromy_from(frame: &FrameField, lp: &Path, q: &[f64], steps: usize) -> Result<Monodromy> {
    if !lp.is_closed() {
        return Err(HflowError::Config("monodromy needs a closed loop".into()));
    }
    if steps == 0 {
        return Err(HflowError::Config("a development needs at least one step".into()));
    }
    let p = lp.start().to_vec();
    let terminal_value = integrate(frame, lp, q, steps, |_, _, _| {})?;
    let split = TwoPointSplitting::new(frame);
    let terminal_jet = split.eval(&p, &terminal_value)?;
    let jet_deviation = (&terminal_jet - split.eval(&p, q)?).abs().max();
    let displacement = terminal_value.iter().zip(q).map(|(f, a)| f - a).collect();
    Ok(Monodromy {
        base: p,
        initial_value: q.to_vec(),
        steps,
        terminal_value,
        displacement,
        terminal_jet,
        jet_deviation,
    })
}

/// `ε̃_j^i(p,q) = ∂f^i(p,x,q)/∂x^j` at `x = p`, where `f(p,x,·)` is the
/// solution with `p ↦ x` developed along the segment `p → q`.
pub fn tilde_splitting(frame: &FrameField, p: &[f64], q: &[f64], h: f64, steps: usize) -> Result<DMatrix<f64>> {
    let n = frame.dim();
    if p.len() != n || q.len() != n {
        return Err(HflowError::ShapeMismatch("points must match the frame dimension".into()));
    }
    if !(h > 0.0) {
        return Err(HflowError::Config(format!("finite-difference step {h} must be positive")));
    }
    let mut out = DMatrix::zeros(n, n);
    if distance(p, q) == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let path = Path::segment(p, q)?;
    for j in 0..n {
        let start = |sign: f64| {
            let mut b = p.to_vec();
            b[j] += sign * h;
            b
        };
        let plus = integrate(frame, &path, &start(1.0), steps, |_, _, _| {})?;
        let minus = integrate(frame, &path, &start(-1.0), steps, |_, _, _| {})?;
        for i in 0..n {
            out[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `∂ε̃_j^i(x,y)/∂y^k` at `y = x` by central differences with step `delta`,
/// stored `[i, j, k]`; it should reproduce `Γ_jk^i`.
pub fn tilde_connection_at(frame: &FrameField, x: &[f64], delta: f64, steps: usize) -> Result<Vec<f64>> {
    let n = frame.dim();
    let h = default_step(frame);
    let mut out = vec![0.0; n * n * n];
    for k in 0..n {
        let at = |sign: f64| {
            let mut y = x.to_vec();
            y[k] += sign * delta;
            tilde_splitting(frame, x, &y, h, steps)
        };
        let (plus, minus) = (at(1.0)?, at(-1.0)?);
        for i in 0..n {
            for j in 0..n {
                out[(i * n + j) * n + k] = (plus[(i, j)] - minus[(i, j)]) / (2.0 * delta);
            }
        }
    }
    Ok(out)
}

/// The solution of the frame PDE with `a ↦ b`, evaluated at `z` by developing
/// along the segment `a → z`. These maps generate `𝓢`.
pub fn solution_map(frame: &FrameField, a: &[f64], b: &[f64], z: &[f64], steps: usize) -> Result<Vec<f64>> {
    straight_value(frame, a, b, z, steps)
}

//! The property suites behind the `validate` task and the acceptance run.
//!
//! Each suite measures a handful of scalar quantities and compares each one
//! against a pinned tolerance. Nothing here asserts; callers decide what a
//! failure means.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracles;
use crate::calculus::{
    bianchi_lines, christoffel_sigma, curvature_after_gauge, gauge_transform_curvature, homogeneous_operator,
    metric_compat_residual, nabla, variation_check, ConnectionRoute, Geometry,
};
use crate::catalog::{builtin, perturbation, random_gauge, random_vector_field, BUILTIN_NAMES};
use crate::error::{HflowError, Result};
use crate::flows::{
    cross_validate, exp_subgroup, gauge_at, hf_pde_integrate, scalar_blowup, FlowOptions, GaugeNode, Termination,
};
use crate::frame::{FrameBacking, FrameField, GaugeField};
use crate::grid::{Chart, IndexTag, TensorField};
use crate::groupoid::{develop, groupoid_curvature, monodromy, monodromy_from, tilde_connection_at, Path, TwoPointSplitting};

/// One measured quantity and the bound it must stay under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured.is_finite() && measured <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Identity,
    Prop5,
    Parallel,
    Bianchi,
    Lie,
    Gauge,
    Variation,
    Keystone,
    Slope,
    Blowup,
    Develop,
    Christoffel,
    Stationarity,
}

impl Suite {
    pub const ALL: [Suite; 13] = [
        Suite::Identity,
        Suite::Prop5,
        Suite::Parallel,
        Suite::Bianchi,
        Suite::Lie,
        Suite::Gauge,
        Suite::Variation,
        Suite::Keystone,
        Suite::Slope,
        Suite::Blowup,
        Suite::Develop,
        Suite::Christoffel,
        Suite::Stationarity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Identity => "identity",
            Suite::Prop5 => "prop5",
            Suite::Parallel => "parallel",
            Suite::Bianchi => "bianchi",
            Suite::Lie => "lie",
            Suite::Gauge => "gauge",
            Suite::Variation => "variation",
            Suite::Keystone => "keystone",
            Suite::Slope => "slope",
            Suite::Blowup => "blowup",
            Suite::Develop => "develop",
            Suite::Christoffel => "christoffel",
            Suite::Stationarity => "stationarity",
        }
    }

    /// Position in [`Suite::ALL`], counted from one.
    pub fn number(self) -> usize {
        Suite::ALL.iter().position(|&s| s == self).unwrap() + 1
    }

    pub fn title(self) -> &'static str {
        match self {
            Suite::Identity => "R̃ vanishes on every catalog frame",
            Suite::Prop5 => "∇T equals 𝔯",
            Suite::Parallel => "frame, coframe and metric are ∇-parallel",
            Suite::Bianchi => "first Bianchi identity",
            Suite::Lie => "Lie-group frames are flat",
            Suite::Gauge => "curvature gauge law",
            Suite::Variation => "variations of Γ and T",
            Suite::Keystone => "flow PDE vs pointwise gauge ODE",
            Suite::Slope => "gauge ODE slope and subgroup exponential",
            Suite::Blowup => "scalar blow-up model",
            Suite::Develop => "developing maps on the Heisenberg group",
            Suite::Christoffel => "Christoffel symbols from torsion",
            Suite::Stationarity => "stationary Heisenberg flow",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = HflowError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Suite::ALL.iter().map(|s| s.name()).collect();
                HflowError::Config(format!("unknown suite `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub title: String,
    pub checks: Vec<Check>,
    /// Free-form facts worth keeping next to the numbers.
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// The check furthest over (or closest to) its tolerance.
    pub fn worst(&self) -> Option<&Check> {
        self.checks.iter().max_by(|a, b| {
            let ra = if a.passed { a.measured / a.tolerance.max(f64::MIN_POSITIVE) } else { f64::INFINITY };
            let rb = if b.passed { b.measured / b.tolerance.max(f64::MIN_POSITIVE) } else { f64::INFINITY };
            ra.total_cmp(&rb)
        })
    }

    /// `[PASS] 8 keystone: <worst check> measured 1e-6 <= tol 1e-5`
    pub fn summary_line(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        match self.worst() {
            Some(c) => format!(
                "[{verdict}] {:>2} {}: {} measured {:.3e} {} tol {:.1e} ({:.1}s)",
                self.suite.number(),
                self.suite.name(),
                c.name,
                c.measured,
                if c.passed { "<=" } else { ">" },
                c.tolerance,
                self.seconds
            ),
            None => format!("[{verdict}] {:>2} {}: no checks", self.suite.number(), self.suite.name()),
        }
    }
}

/// Resolution used for two-dimensional charts.
pub const RES_2D: usize = 64;
/// Resolution used for three-dimensional charts.
pub const RES_3D: usize = 32;

fn resolution_for(dim: usize) -> usize {
    if dim >= 3 {
        RES_3D
    } else {
        RES_2D
    }
}

fn catalog_frame(name: &str) -> Result<FrameField> {
    let r = builtin(name)?;
    FrameField::analytic(r.default_chart(resolution_for(r.dim))?, r.formula)
}

fn torus(dim: usize) -> Result<Arc<Chart>> {
    Ok(Arc::new(Chart::periodic(dim, resolution_for(dim), 2.0 * PI)?))
}

/// Analytic perturbation frame (bandlimit 2) on the standard torus.
pub fn perturbation_frame(dim: usize, seed: u64, amplitude: f64) -> Result<FrameField> {
    let chart = torus(dim)?;
    let r = perturbation(seed, amplitude, 2, &chart)?;
    FrameField::analytic(chart, r.formula)
}

/// Every named catalog frame plus the default perturbation, with labels.
fn all_frames() -> Result<Vec<(String, FrameField)>> {
    let mut out = Vec::new();
    for name in BUILTIN_NAMES {
        out.push((name.to_string(), catalog_frame(name)?));
    }
    out.push(("perturbation".into(), perturbation_frame(2, 0, 0.1)?));
    Ok(out)
}

/// Seeded smooth coordinate vector field on `chart`.
pub fn sample_vector_field(chart: &Arc<Chart>, seed: u64) -> TensorField {
    let f = random_vector_field(seed, 0.5, 1, chart);
    TensorField::from_node_fn(chart.clone(), vec![IndexTag::CoordUp], |_, x, out| {
        let v = f.value(x);
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[(i, 0)];
        }
    })
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, half_width: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-half_width..half_width)).collect()
}

fn identity_suite(checks: &mut Vec<Check>, _notes: &mut Vec<String>) -> Result<()> {
    for (name, frame) in all_frames()? {
        let geo = Geometry::with_route(&frame, ConnectionRoute::Analytic)?;
        checks.push(Check::new(format!("sup|R̃| {name}"), geo.tilde_curvature().sup(), 1e-10));
    }
    Ok(())
}

fn prop5_gap(geo: &Geometry) -> Result<f64> {
    let nt = nabla(&geo.torsion_jet(), &geo.connection.gamma)?; // [r, i, j, k]
    let curv = geo.algebroid_curvature().permute(&[3, 0, 1, 2])?;
    nt.sup_diff(&curv.with_signature(nt.signature().to_vec())?)
}

fn prop5_suite(checks: &mut Vec<Check>, _notes: &mut Vec<String>) -> Result<()> {
    for (label, frame) in [
        ("perturbation T² analytic", perturbation_frame(2, 0, 0.1)?),
        ("heisenberg analytic", catalog_frame("heisenberg")?),
    ] {
        let geo = Geometry::with_route(&frame, ConnectionRoute::Analytic)?;
        checks.push(Check::new(format!("sup|∇T − 𝔯| {label}"), prop5_gap(&geo)?, 1e-10));
    }
    let sampled = perturbation_frame(2, 0, 0.1)?.to_sampled()?;
    for route in [ConnectionRoute::GridSecond, ConnectionRoute::GridConnection] {
        let geo = Geometry::with_route(&sampled, route)?;
        checks.push(Check::new(
            format!("sup|∇T − 𝔯| perturbation T² sampled ({route:?})"),
            prop5_gap(&geo)?,
            1e-6,
        ));
    }
    Ok(())
}

fn parallel_suite(checks: &mut Vec<Check>, _notes: &mut Vec<String>) -> Result<()> {
    for (name, frame) in all_frames()? {
        let geo = Geometry::with_route(&frame, ConnectionRoute::Analytic)?;
        let gamma = &geo.connection.gamma;
        checks.push(Check::new(format!("sup|∇g| {name}"), nabla(&geo.metric, gamma)?.sup(), 1e-10));
        checks.push(Check::new(format!("sup|∇ε(𝟘,x)| {name}"), nabla(&geo.frame, gamma)?.sup(), 1e-10));
        checks.push(Check::new(format!("sup|∇ε(x,𝟘)| {name}"), nabla(&geo.coframe, gamma)?.sup(), 1e-10));
    }
    Ok(())
}

fn bianchi_suite(checks: &mut Vec<Check>, notes: &mut Vec<String>) -> Result<()> {
    // J is an alternating 3-form, so the comparison is empty below three dimensions
    let frames = [
        ("heisenberg", catalog_frame("heisenberg")?),
        ("perturbation seed 0", perturbation_frame(3, 0, 0.1)?),
        ("perturbation seed 1", perturbation_frame(3, 1, 0.2)?),
    ];
    for (name, frame) in frames {
        let geo = Geometry::new(&frame)?;
        let chart = frame.chart().clone();
        let (mut worst, mut literal, mut scale) = (0.0f64, 0.0f64, 0.0f64);
        for triple in 0..5u64 {
            let seed = 100 + 3 * triple;
            let fields: Vec<TensorField> = (0..3).map(|k| sample_vector_field(&chart, seed + k)).collect();
            let lines = bianchi_lines(&geo, &fields[0], &fields[1], &fields[2])?;
            worst = worst.max(lines.residual());
            literal = literal.max(lines.literal_residual());
            scale = scale.max(lines.jacobi.sup());
        }
        checks.push(Check::new(format!("max pairwise gap, 5 triples, {name}"), worst, 1e-6));
        notes.push(format!(
            "{name}: sup|J| {scale:.3e}; with J entering as +J the gap would be {literal:.3e}"
        ));
    }
    Ok(())
}

fn lie_suite(checks: &mut Vec<Check>, _notes: &mut Vec<String>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["heisenberg", "affine"] {
        let frame = catalog_frame(name)?;
        let geo = Geometry::with_route(&frame, ConnectionRoute::Analytic)?;
        checks.push(Check::new(format!("sup|𝔯| {name}"), geo.algebroid_curvature().sup(), 1e-10));
        let s = TwoPointSplitting::new(&frame);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x = random_point(&mut rng, frame.dim(), 0.9);
            let y = random_point(&mut rng, frame.dim(), 0.9);
            worst = worst.max(sup_abs(&groupoid_curvature(&s, &x, &y)?));
        }
        checks.push(Check::new(format!("max |𝓡(x,y)| over 20 pairs, {name}"), worst, 1e-8));
    }
    Ok(())
}

fn gauge_suite(checks: &mut Vec<Check>, notes: &mut Vec<String>) -> Result<()> {
    let frame = perturbation_frame(2, 0, 0.1)?;
    let chart = frame.chart().clone();
    let curvature = Geometry::new(&frame)?.algebroid_curvature();
    for seed in 1..=3u64 {
        let gauge = GaugeField::analytic(chart.clone(), random_gauge(seed, 0.2, 1, &chart))?;
        let law = gauge_transform_curvature(&gauge, &curvature)?;
        let direct = curvature_after_gauge(&gauge, &frame)?;
        checks.push(Check::new(format!("sup|law − recomputed| gauge seed {seed}"), law.sup_diff(&direct)?, 1e-6));
        notes.push(format!(
            "gauge seed {seed}: sup|recomputed 𝔯| {:.3e}, sup|transformed 𝔯| {:.3e}",
            direct.sup(),
            law.sup()
        ));
    }
    let constant = GaugeField::analytic(
        chart.clone(),
        crate::catalog::MatrixFormula::Constant {
            n: 2,
            value: DMatrix::from_row_slice(2, 2, &[1.3, 0.2, -0.1, 0.8]),
        },
    )?;
    let law = gauge_transform_curvature(&constant, &curvature)?;
    let direct = curvature_after_gauge(&constant, &frame)?;
    notes.push(format!(
        "constant gauge: sup|law − recomputed| {:.3e}",
        law.sup_diff(&direct)?
    ));
    Ok(())
}

fn variation_suite(checks: &mut Vec<Check>, _notes: &mut Vec<String>) -> Result<()> {
    let frame = perturbation_frame(2, 0, 0.1)?;
    for seed in 1..=3u64 {
        let h = FrameBacking::Analytic(random_gauge(20 + seed, 0.3, 1, frame.chart()));
        let r = variation_check(&frame, &h, 1e-5)?;
        checks.push(Check::new(format!("dΓ/dt direction {seed}"), r.gamma_discrepancy, 1e-6));
        checks.push(Check::new(format!("dT/dt direction {seed}"), r.torsion_discrepancy, 1e-6));
    }
    Ok(())
}

fn keystone_suite(checks: &mut Vec<Check>, notes: &mut Vec<String>) -> Result<()> {
    let frame = perturbation_frame(2, 0, 0.1)?;
    let cv = cross_validate(&frame, 0.05, 1e-3)?;
    checks.push(Check::new("max relative deviation, t ≤ 0.05", cv.max_deviation, 1e-5));
    notes.push(format!("initial sup|𝔥| {:.3e}", cv.initial_rate));
    let per_time: Vec<String> = cv
        .times
        .iter()
        .zip(&cv.deviations)
        .map(|(t, d)| format!("t={t:.3}: {d:.3e}"))
        .collect();
    notes.push(format!("deviation by time: {}", per_time.join(", ")));
    if cv.pde_termination != Termination::Completed {
        notes.push(format!("PDE stopped early: {:?}", cv.pde_termination));
    }
    Ok(())
}

fn slope_suite(checks: &mut Vec<Check>, _notes: &mut Vec<String>) -> Result<()> {
    let frame = perturbation_frame(2, 0, 0.1)?;
    let geo = Geometry::with_route(&frame, ConnectionRoute::Analytic)?;
    let h = homogeneous_operator(&geo)?;
    let n = frame.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut slope_gap, mut exp_gap) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let idx = rng.random_range(0..frame.chart().num_nodes());
        let node = GaugeNode::from_geometry(&geo, idx);
        let expected = DMatrix::from_row_slice(n, n, h.node(idx)) * &node.coframe;
        let step = 1e-6;
        let slope = (gauge_at(&node, step)? - gauge_at(&node, -step)?) / (2.0 * step);
        slope_gap = slope_gap.max((slope - &expected).abs().max());
        let m = node.initial_slope();
        for k in 0..=10 {
            let t = 1e-3 * k as f64;
            exp_gap = exp_gap.max((exp_subgroup(&m, t) - gauge_at(&node, t)?).abs().max());
        }
    }
    checks.push(Check::new("|gauge slope at 0 − 𝔥 ε₀⁻¹|, 5 nodes", slope_gap, 1e-6));
    checks.push(Check::new("|exp(tM) − 𝔞(t)|, t ≤ 1e-2, 5 nodes", exp_gap, 1e-6));
    Ok(())
}

fn blowup_suite(checks: &mut Vec<Check>, notes: &mut Vec<String>) -> Result<()> {
    let run = scalar_blowup(1.0, 0.5, 2.0, 200)?;
    let t = run
        .numeric_blow_up
        .as_ref()
        .map_or(f64::INFINITY, |b| b.estimate());
    checks.push(Check::new("|numeric t* − 1|, a₀ = 1, R = ½", (t - 1.0).abs(), 1e-3));
    notes.push(format!("closed-form t* {:?}, numeric estimate {t:.6}", run.t_star));
    let flat = scalar_blowup(1.0, 0.0, 2.0, 200)?;
    let drift = flat.numeric.iter().fold(0.0f64, |m, a| m.max((a - 1.0).abs()));
    checks.push(Check::new("max |a(t) − a₀|, R = 0", drift, 1e-10));
    Ok(())
}

fn develop_suite(checks: &mut Vec<Check>, _notes: &mut Vec<String>) -> Result<()> {
    let frame = catalog_frame("heisenberg")?;
    let p = [0.0, 0.0, 0.0];
    let d = develop(&frame, &p, &[0.1, -0.2, 0.05], &Path::segment(&p, &[0.5, 0.5, 0.5])?, 1000)?;
    checks.push(Check::new("frame-equation residual, 1000 steps", d.residual, 1e-8));

    let base = [0.1, -0.2, 0.0];
    let mut worst: f64 = 0.0;
    for (a, b) in [(0, 1), (1, 2), (0, 2)] {
        let lp = Path::square(&base, a, b, 0.6)?;
        for m in [monodromy(&frame, &lp, 1000)?, monodromy_from(&frame, &lp, &[0.2, 0.1, -0.3], 1000)?] {
            worst = worst.max(m.displacement_norm()).max(m.jet_deviation);
        }
    }
    checks.push(Check::new("loop monodromy deviation", worst, 1e-7));

    let mut gap: f64 = 0.0;
    for x in [[0.0, 0.0, 0.0], [0.3, -0.4, 0.2], [-0.5, 0.1, 0.4]] {
        let tc = tilde_connection_at(&frame, &x, 1e-3, 20)?;
        let g = oracles::gamma_at(frame.formula().expect("analytic"), &x);
        gap = gap.max(tc.iter().zip(&g).fold(0.0, |m, (a, b)| m.max((a - b).abs())));
    }
    checks.push(Check::new("∂ε̃ vs Γ at 3 points", gap, 1e-5));
    Ok(())
}

fn christoffel_suite(checks: &mut Vec<Check>, notes: &mut Vec<String>) -> Result<()> {
    let frame = catalog_frame("heisenberg")?;
    let geo = Geometry::with_route(&frame, ConnectionRoute::Analytic)?;
    let sig = christoffel_sigma(&geo)?;
    let s = &sig.sigma;
    checks.push(Check::new("sup|Σ_jk − Σ_kj|", s.sub(&s.permute(&[0, 2, 1])?)?.sup(), 0.0));
    checks.push(Check::new("metric compatibility residual", metric_compat_residual(s, &geo.metric)?, 1e-6));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut gap: f64 = 0.0;
    for _ in 0..20 {
        let node = rng.random_range(0..frame.chart().num_nodes());
        let x = frame.chart().coordinates(node);
        let classical = oracles::classical_christoffel_at(frame.formula().expect("analytic"), &x);
        gap = gap.max(s.node(node).iter().zip(&classical).fold(0.0, |m, (a, b)| m.max((a + b).abs())));
    }
    checks.push(Check::new("|Σ + classical Christoffel| at 20 nodes", gap, 1e-6));
    notes.push(format!(
        "selected Σ = {:+}·½·{}·(E_jk + E_kj)",
        sig.choice.sign, sig.choice.weight
    ));
    for (choice, res) in &sig.candidate_residuals {
        notes.push(format!("candidate sign {:+} weight {}: residual {res:.3e}", choice.sign, choice.weight));
    }
    Ok(())
}

fn stationarity_suite(checks: &mut Vec<Check>, notes: &mut Vec<String>) -> Result<()> {
    let frame = catalog_frame("heisenberg")?;
    let t_end = 0.01;
    let trace = hf_pde_integrate(&frame, &FlowOptions::new(t_end, 1e-3))?;
    let drift = trace.final_state.geometry.frame.value.sup_diff(&frame.values())?;
    checks.push(Check::new("frame drift per unit time", drift / t_end, 1e-12));
    let sup_h = trace.samples.iter().fold(0.0f64, |m, s| m.max(s.sup_h));
    notes.push(format!("sup|𝔥| along the run {sup_h:.3e}; termination {:?}", trace.termination));
    if trace.termination != Termination::Completed {
        checks.push(Check::new("run completed", 1.0, 0.0));
    }
    Ok(())
}

/// Runs one suite at its pinned sizes and tolerances.
pub fn run_suite(suite: Suite) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let run = match suite {
        Suite::Identity => identity_suite,
        Suite::Prop5 => prop5_suite,
        Suite::Parallel => parallel_suite,
        Suite::Bianchi => bianchi_suite,
        Suite::Lie => lie_suite,
        Suite::Gauge => gauge_suite,
        Suite::Variation => variation_suite,
        Suite::Keystone => keystone_suite,
        Suite::Slope => slope_suite,
        Suite::Blowup => blowup_suite,
        Suite::Develop => develop_suite,
        Suite::Christoffel => christoffel_suite,
        Suite::Stationarity => stationarity_suite,
    };
    run(&mut checks, &mut notes)?;
    Ok(SuiteReport {
        suite,
        title: suite.title().to_string(),
        checks,
        notes,
        seconds: start.elapsed().as_secs_f64(),
    })
}

//! Time integration of the homogeneous flow `∂ε/∂t = 𝔥(ε)`, its DeTurck
//! variant, the pointwise gauge ODE and the scalar blow-up model.

pub mod ode;

use std::fmt::Write as _;
use std::path::Path as FsPath;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{deturck_operator, homogeneous_operator, Connection, ConnectionRoute, Geometry};
use crate::error::{HflowError, Result};
use crate::frame::{mat, write_mat, FrameField};
use crate::grid::{Chart, ChartKind, FieldFile, TensorField};
pub use ode::{dormand_prince, BlowUpRecord, OdeOptions, OdeSolution};

#[cfg(test)]
mod tests;

/// The PDE stops with a blow-up flag below this `min |det ε|`.
pub const DET_THRESHOLD: f64 = 1e-6;
/// The PDE stops with a blow-up flag above this `sup |ε|`.
pub const MAGNITUDE_THRESHOLD: f64 = 1e6;

/// Frame at time `t` with its first-order geometry.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub frame: FrameField,
    pub geometry: Geometry,
}

impl FlowState {
    fn new(t: f64, frame: FrameField) -> Result<Self> {
        let geometry = Geometry::with_route(&frame, ConnectionRoute::GridSecond)?;
        Ok(Self { t, frame, geometry })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    BlowUp { t: f64, reason: String },
    StepFailure { t: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    pub sup_torsion: f64,
    pub sup_curvature: f64,
    pub sup_h: f64,
    pub min_det: f64,
    pub sup_frame: f64,
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    /// Step actually used; `t_end` is divided into equal steps no larger than requested.
    pub dt: f64,
    pub samples: Vec<FlowSample>,
    /// Frame values at the sample times, when requested.
    pub snapshots: Vec<(f64, TensorField)>,
    pub termination: Termination,
    /// Last state reached without violating the invariants.
    pub final_state: FlowState,
}

impl FlowTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,sup_torsion,sup_curvature,sup_h,min_det,sup_frame\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e}",
                s.t, s.sup_torsion, s.sup_curvature, s.sup_h, s.min_det, s.sup_frame
            );
        }
        out
    }

    pub fn write_csv(&self, path: &FsPath) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Snapshots packed as one field file, fields named `frame@t=<t>`.
    pub fn snapshot_file(&self) -> Result<FieldFile> {
        let names: Vec<String> = self.snapshots.iter().map(|(t, _)| format!("frame@t={t:e}")).collect();
        let fields: Vec<(&str, &TensorField)> =
            names.iter().zip(&self.snapshots).map(|(n, (_, f))| (n.as_str(), f)).collect();
        FieldFile::from_fields(self.final_state.frame.chart(), &fields)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Record a sample every this many steps (the final time is always recorded).
    pub sample_every: usize,
    pub keep_snapshots: bool,
}

impl FlowOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            sample_every: 1,
            keep_snapshots: false,
        }
    }

    fn steps(&self) -> Result<(usize, f64)> {
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) || !self.dt.is_finite() || !self.t_end.is_finite() {
            return Err(HflowError::Config(format!(
                "need dt > 0 and t_end >= 0, got dt = {}, t_end = {}",
                self.dt, self.t_end
            )));
        }
        let steps = (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize;
        let dt = if steps == 0 { self.dt } else { self.t_end / steps as f64 };
        Ok((steps, dt))
    }
}

fn frame_stats(values: &TensorField) -> (f64, f64) {
    let n = values.dim();
    let min_det = (0..values.num_nodes())
        .map(|node| mat(n, values.node(node)).determinant().abs())
        .fold(f64::INFINITY, f64::min);
    (min_det, values.sup())
}

fn invariant_violation(values: &TensorField) -> Option<String> {
    if !values.is_finite() {
        return Some("non-finite frame values".into());
    }
    let (min_det, sup) = frame_stats(values);
    if min_det < DET_THRESHOLD {
        Some(format!("min |det| = {min_det:e} below {DET_THRESHOLD:e}"))
    } else if sup > MAGNITUDE_THRESHOLD {
        Some(format!("sup |ε| = {sup:e} above {MAGNITUDE_THRESHOLD:e}"))
    } else {
        None
    }
}

/// Nodes this close to the edge of an open box keep their initial values.
pub const DIRICHLET_LAYER: usize = 2;

fn is_clamped(chart: &Chart, node: usize) -> bool {
    chart.kind() == ChartKind::OpenBox
        && chart
            .multi_index(node)
            .iter()
            .zip(chart.resolution())
            .any(|(&i, &res)| i < DIRICHLET_LAYER || i + DIRICHLET_LAYER >= res)
}

fn clamp_boundary(mut f: TensorField) -> TensorField {
    let chart = f.chart().clone();
    if chart.kind() == ChartKind::OpenBox {
        for node in (0..chart.num_nodes()).filter(|&node| is_clamped(&chart, node)) {
            f.node_mut(node).fill(0.0);
        }
    }
    f
}

/// Right-hand side of the flow: `𝔥`, plus `𝔚` when a reference connection is
/// given. Both vanish on the Dirichlet layer of an open box.
fn flow_rhs(geo: &Geometry, reference: Option<&Connection>) -> Result<(TensorField, TensorField)> {
    let h = homogeneous_operator(geo)?;
    let total = match reference {
        Some(r) => h.axpy(1.0, &deturck_operator(geo, r)?)?,
        None => h.clone(),
    };
    Ok((clamp_boundary(h), clamp_boundary(total)))
}

fn sample(state: &FlowState, h: &TensorField) -> FlowSample {
    let (min_det, sup_frame) = frame_stats(&state.geometry.frame.value);
    FlowSample {
        t: state.t,
        sup_torsion: state.geometry.torsion().sup(),
        sup_curvature: state.geometry.algebroid_curvature().sup(),
        sup_h: h.sup(),
        min_det,
        sup_frame,
    }
}

fn integrate(frame0: &FrameField, opts: &FlowOptions, reference: Option<&Connection>) -> Result<FlowTrace> {
    let (steps, dt) = opts.steps()?;
    let sampled = frame0.to_sampled()?;
    if let Some(r) = reference {
        if **r.gamma.chart() != **sampled.chart() {
            return Err(HflowError::ShapeMismatch("reference connection lives on a different chart".into()));
        }
    }
    let mut state = FlowState::new(0.0, sampled)?;
    let mut trace = FlowTrace {
        dt,
        samples: Vec::new(),
        snapshots: Vec::new(),
        termination: Termination::Completed,
        final_state: state.clone(),
    };
    let every = opts.sample_every.max(1);
    let rhs_at = |values: &TensorField, t: f64| -> std::result::Result<TensorField, Termination> {
        if let Some(reason) = invariant_violation(values) {
            return Err(Termination::BlowUp { t, reason });
        }
        let frame = FrameField::sampled(values.clone()).map_err(|e| Termination::StepFailure { t, reason: e.to_string() })?;
        let geo = Geometry::with_route(&frame, ConnectionRoute::GridSecond)
            .map_err(|e| Termination::StepFailure { t, reason: e.to_string() })?;
        let (_, total) = flow_rhs(&geo, reference).map_err(|e| Termination::StepFailure { t, reason: e.to_string() })?;
        if !total.is_finite() {
            return Err(Termination::StepFailure {
                t,
                reason: "non-finite right-hand side".into(),
            });
        }
        Ok(total)
    };
    for step in 0..=steps {
        if let Some(reason) = invariant_violation(&state.geometry.frame.value) {
            trace.termination = Termination::BlowUp { t: state.t, reason };
            break;
        }
        let (h, k1) = match flow_rhs(&state.geometry, reference) {
            Ok(v) => v,
            Err(e) => {
                trace.termination = Termination::StepFailure {
                    t: state.t,
                    reason: e.to_string(),
                };
                break;
            }
        };
        if step % every == 0 || step == steps {
            trace.samples.push(sample(&state, &h));
            if opts.keep_snapshots {
                trace.snapshots.push((state.t, state.geometry.frame.value.clone()));
            }
        }
        trace.final_state = state.clone();
        if step == steps {
            break;
        }
        let e = &state.geometry.frame.value;
        let t = state.t;
        let advanced = (|| {
            let k2 = rhs_at(&e.axpy(0.5 * dt, &k1).expect("same chart"), t + 0.5 * dt)?;
            let k3 = rhs_at(&e.axpy(0.5 * dt, &k2).expect("same chart"), t + 0.5 * dt)?;
            let k4 = rhs_at(&e.axpy(dt, &k3).expect("same chart"), t + dt)?;
            let mut next = e.clone();
            for (w, k) in [(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)] {
                next = next.axpy(w * dt / 6.0, k).expect("same chart");
            }
            Ok(next)
        })();
        let next = match advanced {
            Ok(v) => v,
            Err(term) => {
                trace.termination = term;
                break;
            }
        };
        let t_next = (step + 1) as f64 * dt;
        if let Some(reason) = invariant_violation(&next) {
            trace.termination = Termination::BlowUp { t: t_next, reason };
            break;
        }
        state = match FrameField::sampled(next).and_then(|f| FlowState::new(t_next, f)) {
            Ok(s) => s,
            Err(e) => {
                trace.termination = Termination::StepFailure {
                    t: t_next,
                    reason: e.to_string(),
                };
                break;
            }
        };
    }
    Ok(trace)
}

/// Homogeneous flow by the method of lines with classical RK4 in time.
pub fn hf_pde_integrate(frame0: &FrameField, opts: &FlowOptions) -> Result<FlowTrace> {
    integrate(frame0, opts, None)
}

/// DeTurck-modified flow `∂ε/∂t = 𝔥 + 𝔚` with reference connection `Γ̄`.
pub fn deturck_pde_integrate(frame0: &FrameField, reference: &Connection, opts: &FlowOptions) -> Result<FlowTrace> {
    integrate(frame0, opts, Some(reference))
}

/// Reference connection choices for the DeTurck flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceChoice {
    Zero,
    /// `Γ̄ = Γ(ε₀)` on the grid route the flow uses.
    Initial,
}

pub fn reference_connection(frame0: &FrameField, choice: ReferenceChoice) -> Result<Connection> {
    match choice {
        ReferenceChoice::Zero => Ok(Connection::zero(frame0.chart().clone())),
        ReferenceChoice::Initial => Ok(Geometry::with_route(frame0, ConnectionRoute::GridSecond)?.connection),
    }
}

/// Initial data of the gauge ODE at one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeNode {
    pub node: usize,
    /// `𝔯(ε₀)` at the node, `[i, r, j, k]`.
    pub curvature: Vec<f64>,
    /// `g^ij(x,0)`.
    pub metric_inverse: DMatrix<f64>,
    /// `ε(𝟘,x,0)`.
    pub frame: DMatrix<f64>,
    /// `ε(x,𝟘,0)`.
    pub coframe: DMatrix<f64>,
}

impl GaugeNode {
    pub fn from_geometry(geo: &Geometry, node: usize) -> Self {
        let n = geo.dim();
        let curvature = geo.algebroid_curvature().node(node).to_vec();
        Self::from_parts(node, curvature, geo, n)
    }

    fn from_parts(node: usize, curvature: Vec<f64>, geo: &Geometry, n: usize) -> Self {
        Self {
            node,
            curvature,
            metric_inverse: mat(n, geo.metric_inv.value.node(node)),
            frame: mat(n, geo.frame.value.node(node)),
            coframe: mat(n, geo.coframe.value.node(node)),
        }
    }

    /// Every node of `geo`, sharing one curvature evaluation.
    pub fn all(geo: &Geometry) -> Vec<Self> {
        let n = geo.dim();
        let curv = geo.algebroid_curvature();
        (0..geo.chart().num_nodes())
            .map(|node| Self::from_parts(node, curv.node(node).to_vec(), geo, n))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.frame.nrows()
    }

    /// `d𝔞/dt = 𝔥(𝔞ε₀)·ε₀⁻¹`, with `𝔯(𝔞ε₀)` from the gauge law and
    /// `g^ij(t) = g^ab(0) 𝔞_a^i 𝔞_b^j`.
    pub fn rhs(&self, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let n = self.dim();
        let b = a.clone().try_inverse()?;
        let e = a * &self.frame;
        let ginv = a * &self.metric_inverse * a.transpose();
        let r0 = |i: usize, r: usize, j: usize, k: usize| self.curvature[((i * n + r) * n + j) * n + k];
        // 𝔯_t[i,r,j,m] = 𝔞[i,p] 𝔯₀[p,r,j,q] 𝔟[q,m]
        let mut rt = vec![0.0; n * n * n * n];
        for i in 0..n {
            for r in 0..n {
                for j in 0..n {
                    for m in 0..n {
                        let mut acc = 0.0;
                        for p in 0..n {
                            for q in 0..n {
                                acc += a[(i, p)] * r0(p, r, j, q) * b[(q, m)];
                            }
                        }
                        rt[((i * n + r) * n + j) * n + m] = acc;
                    }
                }
            }
        }
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for a_ in 0..n {
                    for bb in 0..n {
                        for c in 0..n {
                            acc += ginv[(bb, c)] * e[(a_, j)] * rt[((i * n + a_) * n + c) * n + bb];
                        }
                    }
                }
                h[(i, j)] = -acc;
            }
        }
        Some(h * &self.coframe)
    }

    /// `𝔥_(j)^i(ε₀)`, the initial slope of the gauge ODE.
    pub fn initial_slope(&self) -> DMatrix<f64> {
        let n = self.dim();
        self.rhs(&DMatrix::identity(n, n)).expect("identity is invertible")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeTrajectory {
    pub node: usize,
    pub times: Vec<f64>,
    /// `𝔞(x,t)` at each time; the first entry is the identity.
    pub matrices: Vec<DMatrix<f64>>,
    pub blow_up: Option<BlowUpRecord>,
}

impl GaugeTrajectory {
    pub fn to_csv(&self) -> String {
        let n = self.matrices.first().map(|m| m.nrows()).unwrap_or(0);
        let mut out = String::from("t");
        for i in 0..n {
            for j in 0..n {
                let _ = write!(out, ",a[{i},{j}]");
            }
        }
        out.push('\n');
        for (t, m) in self.times.iter().zip(&self.matrices) {
            let _ = write!(out, "{t:e}");
            for i in 0..n {
                for j in 0..n {
                    let _ = write!(out, ",{:e}", m[(i, j)]);
                }
            }
            out.push('\n');
        }
        out
    }
}

fn output_times(t_end: f64, dt: f64) -> Result<Vec<f64>> {
    let (steps, dt) = FlowOptions::new(t_end, dt).steps()?;
    Ok((0..=steps).map(|k| k as f64 * dt).collect())
}

fn solve_gauge(node: &GaugeNode, times: &[f64], sign: f64, opts: &OdeOptions) -> OdeSolution {
    let n = node.dim();
    let mut identity = vec![0.0; n * n];
    write_mat(&DMatrix::identity(n, n), &mut identity);
    dormand_prince(
        |_, y| {
            let a = mat(n, y);
            match node.rhs(&a) {
                Some(d) => {
                    let mut out = vec![0.0; n * n];
                    write_mat(&(d * sign), &mut out);
                    out
                }
                None => vec![f64::NAN; n * n],
            }
        },
        &identity,
        times,
        opts,
    )
}

/// Integrates the gauge ODE at one node with outputs every `dt` up to `t_end`.
pub fn gauge_ode_integrate(node: &GaugeNode, t_end: f64, dt: f64) -> Result<GaugeTrajectory> {
    gauge_ode_with(node, &output_times(t_end, dt)?, &OdeOptions::default())
}

/// As [`gauge_ode_integrate`] with explicit increasing output times starting at 0.
pub fn gauge_ode_with(node: &GaugeNode, times: &[f64], opts: &OdeOptions) -> Result<GaugeTrajectory> {
    if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(HflowError::Config("gauge output times must increase from 0".into()));
    }
    let n = node.dim();
    let sol = solve_gauge(node, times, 1.0, opts);
    let mut matrices: Vec<DMatrix<f64>> = sol.states.iter().map(|y| mat(n, y)).collect();
    matrices[0] = DMatrix::identity(n, n);
    Ok(GaugeTrajectory {
        node: node.node,
        times: sol.times,
        matrices,
        blow_up: sol.blow_up,
    })
}

/// `𝔞(x,t)` for a single time of either sign.
pub fn gauge_at(node: &GaugeNode, t: f64) -> Result<DMatrix<f64>> {
    let n = node.dim();
    if t == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let sol = solve_gauge(node, &[0.0, t.abs()], t.signum(), &OdeOptions::default());
    match sol.blow_up {
        Some(b) => Err(HflowError::IdentityViolation {
            what: format!("gauge ODE reached t = {t} ({})", b.reason),
            value: b.t_lower,
            tolerance: t.abs(),
        }),
        None => Ok(mat(n, &sol.states[1])),
    }
}

/// `exp(tM)`, the solution of `d𝔞/dt = 𝔞M` with `𝔞(0) = I`.
pub fn exp_subgroup(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (m * t).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarBlowup {
    pub a0: f64,
    pub r: f64,
    pub times: Vec<f64>,
    /// Numerical solution at `times` (shorter than `times` after a blow-up).
    pub numeric: Vec<f64>,
    /// `a₀ (1 − 2Ra₀²t)^(−1/2)` at `times`, infinite past `t*`.
    pub closed_form: Vec<f64>,
    /// `1/(2Ra₀²)` when `Ra₀² > 0`.
    pub t_star: Option<f64>,
    pub numeric_blow_up: Option<BlowUpRecord>,
}

/// `da/dt = a³R`, integrated numerically and in closed form on `samples + 1` times.
pub fn scalar_blowup(a0: f64, r: f64, t_end: f64, samples: usize) -> Result<ScalarBlowup> {
    if a0 == 0.0 || !a0.is_finite() || !r.is_finite() || !(t_end > 0.0) || samples == 0 {
        return Err(HflowError::Config("scalar model needs a₀ ≠ 0, finite R, t_end > 0".into()));
    }
    let times: Vec<f64> = (0..=samples).map(|k| t_end * k as f64 / samples as f64).collect();
    let sol = dormand_prince(|_, y| vec![y[0].powi(3) * r], &[a0], &times, &OdeOptions::default());
    let k = 2.0 * r * a0 * a0;
    let closed_form = times
        .iter()
        .map(|&t| {
            let base = 1.0 - k * t;
            if base > 0.0 {
                a0 / base.sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    Ok(ScalarBlowup {
        a0,
        r,
        numeric: sol.states.iter().map(|y| y[0]).collect(),
        closed_form,
        t_star: (k > 0.0).then(|| 1.0 / k),
        numeric_blow_up: sol.blow_up,
        times,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValidation {
    pub dt: f64,
    pub times: Vec<f64>,
    /// `sup|ε_PDE − 𝔞ε₀| / sup|ε_PDE|` at each time.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub pde_termination: Termination,
    /// Nodes whose gauge ODE stopped early, with the record.
    pub gauge_blowups: Vec<(usize, BlowUpRecord)>,
    /// `sup |𝔥(ε₀)|`, the scale of the evolution.
    pub initial_rate: f64,
}

impl CrossValidation {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,relative_deviation\n");
        for (t, d) in self.times.iter().zip(&self.deviations) {
            let _ = writeln!(out, "{t:e},{d:e}");
        }
        out
    }
}

/// Runs the PDE and, independently at every node, the gauge ODE from the same
/// initial curvature and metric, then compares `ε_t` with `𝔞(t)ε₀`.
pub fn cross_validate(frame0: &FrameField, t_end: f64, dt: f64) -> Result<CrossValidation> {
    let opts = FlowOptions {
        keep_snapshots: true,
        ..FlowOptions::new(t_end, dt)
    };
    let trace = hf_pde_integrate(frame0, &opts)?;
    let sampled = frame0.to_sampled()?;
    let geo = Geometry::with_route(&sampled, ConnectionRoute::GridSecond)?;
    let initial_rate = homogeneous_operator(&geo)?.sup();
    let times = output_times(t_end, dt)?;
    let nodes = GaugeNode::all(&geo);
    let trajectories: Vec<GaugeTrajectory> = nodes
        .par_iter()
        .map(|node| gauge_ode_with(node, &times, &OdeOptions::default()))
        .collect::<Result<_>>()?;
    let gauge_blowups = trajectories
        .iter()
        .filter_map(|tr| tr.blow_up.clone().map(|b| (tr.node, b)))
        .collect();
    let reached = trajectories.iter().map(|tr| tr.times.len()).min().unwrap_or(0).min(trace.snapshots.len());
    let n = geo.dim();
    let mut deviations = Vec::with_capacity(reached);
    for k in 0..reached {
        let (_, pde) = &trace.snapshots[k];
        let mut worst: f64 = 0.0;
        for (node, tr) in trajectories.iter().enumerate() {
            let rebuilt = &tr.matrices[k] * &nodes[node].frame;
            let diff = (rebuilt - mat(n, pde.node(node))).abs().max();
            worst = worst.max(diff);
        }
        deviations.push(worst / pde.sup().max(f64::MIN_POSITIVE));
    }
    Ok(CrossValidation {
        dt: trace.dt,
        times: times[..reached].to_vec(),
        max_deviation: deviations.iter().copied().fold(0.0, f64::max),
        deviations,
        pde_termination: trace.termination,
        gauge_blowups,
        initial_rate,
    })
}

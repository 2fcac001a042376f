//! One function per subcommand. Each fills in the report and writes artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use hflow_core::calculus::{christoffel_sigma, homogeneous_operator, Geometry};
use hflow_core::flows::{
    cross_validate, deturck_pde_integrate, gauge_at, gauge_ode_integrate, hf_pde_integrate, reference_connection,
    scalar_blowup, FlowOptions, GaugeNode, ReferenceChoice, Termination,
};
use hflow_core::grid::io::component_label;
use hflow_core::grid::FieldFile;
use hflow_core::groupoid::{develop as develop_path, monodromy_from, Path};
use hflow_core::validation::{run_suite, Suite};
use hflow_core::FrameField;
use serde_json::json;

use crate::config::{Reference, RunConfig, Task};
use crate::report::{RunReport, Status};
use crate::spec::{load_frame, parse_point, ChartSpec, FrameSpec, LoadedFrame};
use crate::CliError;

/// Zero tolerance for quantities that should vanish on closed-form frames.
const EXACT: f64 = 1e-10;

pub fn run(report: &mut RunReport) -> Result<(), CliError> {
    let start = Instant::now();
    let outcome = match report.task {
        Task::Inspect => inspect(report),
        Task::Flow => flow(report),
        Task::GaugeOde => gauge_ode(report),
        Task::Develop => develop(report),
        Task::Validate => validate(report),
        Task::CrossValidate => cross(report),
    };
    report.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    outcome
}

fn load(cfg: &RunConfig) -> Result<LoadedFrame, CliError> {
    let spec = FrameSpec::parse(&cfg.frame)?;
    let chart = cfg.chart.as_deref().map(ChartSpec::parse).transpose()?;
    load_frame(&spec, chart, cfg.resolution)
}

fn describe_frame(report: &mut RunReport, frame: &FrameField) {
    let chart = frame.chart();
    report.result("dim", frame.dim());
    report.result("resolution", chart.resolution());
    report.result("chart_kind", chart.kind());
    report.result("analytic", frame.is_analytic());
    report.result("min_abs_det", frame.min_abs_det());
}

fn centre_node(frame: &FrameField) -> usize {
    let chart = frame.chart();
    let idx: Vec<usize> = chart.resolution().iter().map(|r| r / 2).collect();
    chart.node_index(&idx)
}

fn inspect(report: &mut RunReport) -> Result<(), CliError> {
    let loaded = load(&report.config)?;
    let frame = &loaded.frame;
    describe_frame(report, frame);
    let geo = Geometry::new(frame).map_err(CliError::numerical)?;
    let torsion = geo.torsion();
    let curvature = geo.algebroid_curvature();
    let tilde = geo.tilde_curvature();
    let h = homogeneous_operator(&geo).map_err(CliError::numerical)?;
    report.result("route", geo.route);
    report.result("sup_gamma", geo.connection.gamma.sup());
    report.result("sup_torsion", torsion.sup());
    report.result("sup_algebroid_curvature", curvature.sup());
    report.result("sup_tilde_curvature", tilde.sup());
    report.result("sup_flow_operator", h.sup());

    let node = centre_node(frame);
    let n = frame.dim();
    let nonzero: BTreeMap<String, f64> = torsion
        .node(node)
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-12)
        .map(|(c, v)| (component_label("T", n, 3, c), *v))
        .collect();
    report.result("centre", frame.chart().coordinates(node));
    report.result("torsion_at_centre", nonzero);
    let sigma = christoffel_sigma(&geo).map_err(CliError::numerical)?;
    report.result("christoffel_choice", sigma.choice);

    let cfg = report.config.clone();
    let tilde_tol = if frame.is_analytic() { EXACT } else { 1e-6 };
    report.assert("sup|R̃|", tilde.sup(), cfg.tolerance("tilde_curvature", tilde_tol));
    if let Some(expected) = loaded.expected {
        if expected.algebroid_flat == Some(true) {
            report.assert("sup|𝔯|", curvature.sup(), cfg.tolerance("algebroid_curvature", EXACT));
        }
        if expected.stationary == Some(true) {
            report.assert("sup|𝔥|", h.sup(), cfg.tolerance("flow_operator", EXACT));
        }
        if expected.torsion_free == Some(true) {
            report.assert("sup|T|", torsion.sup(), cfg.tolerance("torsion", EXACT));
        }
    }
    let values = frame.values();
    let file = FieldFile::from_fields(
        frame.chart(),
        &[
            ("frame", &values),
            ("gamma", &geo.connection.gamma),
            ("torsion", &torsion),
            ("flow_operator", &h),
        ],
    )
    .map_err(CliError::numerical)?;
    report.artifact("inspect_fields.json", &file.to_json())?;
    Ok(())
}

fn flow(report: &mut RunReport) -> Result<(), CliError> {
    let cfg = report.config.clone();
    let frame = load(&cfg)?.frame;
    describe_frame(report, &frame);
    let opts = FlowOptions {
        sample_every: cfg.sample_every,
        keep_snapshots: cfg.snapshots,
        ..FlowOptions::new(cfg.t_end, cfg.dt)
    };
    let trace = match cfg.reference {
        Reference::None => hf_pde_integrate(&frame, &opts),
        Reference::Zero | Reference::Initial => {
            let choice = if cfg.reference == Reference::Zero {
                ReferenceChoice::Zero
            } else {
                ReferenceChoice::Initial
            };
            reference_connection(&frame, choice).and_then(|r| deturck_pde_integrate(&frame, &r, &opts))
        }
    }
    .map_err(CliError::numerical)?;
    report.artifact("flow.csv", &trace.to_csv())?;
    if cfg.snapshots {
        let file = trace.snapshot_file().map_err(CliError::numerical)?;
        report.artifact("flow_snapshots.json", &file.to_json())?;
    }
    report.result("dt_used", trace.dt);
    report.result("samples", trace.samples.len());
    report.result("final_t", trace.final_state.t);
    report.result("termination", &trace.termination);
    if let (Some(first), Some(last)) = (trace.samples.first(), trace.samples.last()) {
        report.result("initial_sample", first);
        report.result("final_sample", last);
    }
    let backwards = trace.samples.windows(2).filter(|w| w[1].t <= w[0].t).count();
    report.assert("time column increasing (violations)", backwards as f64, 0.0);
    if let Termination::StepFailure { t, reason } = &trace.termination {
        report.status = Status::Error;
        report.error = Some(format!("flow step failed at t = {t}: {reason}"));
    }
    Ok(())
}

fn gauge_ode(report: &mut RunReport) -> Result<(), CliError> {
    let cfg = report.config.clone();
    if let Some(text) = &cfg.scalar {
        let p = parse_point(text)?;
        let [a0, r] = p[..] else {
            return Err(CliError::usage(format!("--scalar expects `a0,R`, got `{text}`")));
        };
        let samples = (cfg.t_end / cfg.dt).ceil().max(1.0) as usize;
        let run = scalar_blowup(a0, r, cfg.t_end, samples).map_err(CliError::numerical)?;
        let mut csv = String::from("t,numeric,closed_form\n");
        for (k, t) in run.times.iter().enumerate() {
            let num = run.numeric.get(k).map_or(String::new(), |v| format!("{v:e}"));
            let _ = writeln!(csv, "{t:e},{num},{:e}", run.closed_form[k]);
        }
        report.artifact("scalar_blowup.csv", &csv)?;
        report.result("t_star", run.t_star);
        report.result("numeric_blow_up", &run.numeric_blow_up);
        if let (Some(t_star), Some(b)) = (run.t_star, &run.numeric_blow_up) {
            report.assert("|numeric t* − closed form|", (b.estimate() - t_star).abs(), cfg.tolerance("blowup", 1e-3));
        }
        if r == 0.0 {
            let drift = run.numeric.iter().fold(0.0f64, |m, a| m.max((a - a0).abs()));
            report.assert("max |a(t) − a₀|", drift, cfg.tolerance("constant", EXACT));
        }
        return Ok(());
    }
    let frame = load(&cfg)?.frame;
    describe_frame(report, &frame);
    if cfg.node >= frame.chart().num_nodes() {
        return Err(CliError::usage(format!(
            "node {} is outside a grid of {} nodes",
            cfg.node,
            frame.chart().num_nodes()
        )));
    }
    let geo = Geometry::new(&frame).map_err(CliError::numerical)?;
    let node = GaugeNode::from_geometry(&geo, cfg.node);
    let tr = gauge_ode_integrate(&node, cfg.t_end, cfg.dt).map_err(CliError::numerical)?;
    report.artifact("gauge_ode.csv", &tr.to_csv())?;
    report.result("node", cfg.node);
    report.result("coordinates", frame.chart().coordinates(cfg.node));
    report.result("blow_up", &tr.blow_up);
    if let Some(last) = tr.matrices.last() {
        report.result("final_determinant", last.determinant());
    }
    let step = 1e-6;
    let slope = (gauge_at(&node, step).map_err(CliError::numerical)?
        - gauge_at(&node, -step).map_err(CliError::numerical)?)
        / (2.0 * step);
    let gap = (slope - node.initial_slope()).abs().max();
    report.assert("|d𝔞/dt(0) − 𝔥 ε₀⁻¹|", gap, cfg.tolerance("slope", 1e-6));
    Ok(())
}

fn develop(report: &mut RunReport) -> Result<(), CliError> {
    let cfg = report.config.clone();
    let loaded = load(&cfg)?;
    let frame = &loaded.frame;
    describe_frame(report, frame);
    let chart = frame.chart();
    let from = match &cfg.from {
        Some(t) => parse_point(t)?,
        None => (0..chart.dim()).map(|a| 0.5 * (chart.lower()[a] + chart.upper()[a])).collect(),
    };
    let q = cfg.initial.as_deref().map(parse_point).transpose()?.unwrap_or_else(|| from.clone());
    if from.len() != frame.dim() || q.len() != frame.dim() {
        return Err(CliError::usage(format!("points need {} coordinates", frame.dim())));
    }
    let flat = loaded.expected.is_some_and(|e| e.algebroid_flat == Some(true));

    if let Some(spec) = &cfg.loop_spec {
        let p = parse_point(spec)?;
        let [a, b, side] = p[..] else {
            return Err(CliError::usage(format!("--loop expects `a,b,side`, got `{spec}`")));
        };
        let lp = Path::square(&from, a as usize, b as usize, side).map_err(CliError::usage_from)?;
        let m = monodromy_from(frame, &lp, &q, cfg.steps).map_err(CliError::numerical)?;
        report.artifact("monodromy.txt", &m.report())?;
        report.result("displacement", &m.displacement);
        report.result("displacement_norm", m.displacement_norm());
        report.result("jet_deviation", m.jet_deviation);
        if flat {
            let worst = m.displacement_norm().max(m.jet_deviation);
            report.assert("loop monodromy deviation", worst, cfg.tolerance("monodromy", 1e-7));
        }
    }
    if let Some(to) = &cfg.to {
        let to = parse_point(to)?;
        let path = Path::segment(&from, &to).map_err(CliError::usage_from)?;
        let d = develop_path(frame, &from, &q, &path, cfg.steps).map_err(CliError::numerical)?;
        report.artifact("develop.csv", &d.to_csv())?;
        report.result("residual", d.residual);
        report.result("terminal_value", &d.terminal_value);
        report.result("terminal_jet_determinant", d.terminal_jet.determinant());
        if flat {
            report.assert("frame-equation residual", d.residual, cfg.tolerance("residual", 1e-8));
        }
    }
    if cfg.to.is_none() && cfg.loop_spec.is_none() {
        return Err(CliError::usage("develop needs --to or --loop"));
    }
    report.result("from", from);
    report.result("initial", q);
    Ok(())
}

fn validate(report: &mut RunReport) -> Result<(), CliError> {
    let suites: Vec<Suite> = if report.config.suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        report
            .config
            .suites
            .iter()
            .map(|s| s.parse::<Suite>().map_err(CliError::usage_from))
            .collect::<Result<_, _>>()?
    };
    let mut text = String::new();
    for suite in suites {
        let r = run_suite(suite).map_err(CliError::numerical)?;
        for c in &r.checks {
            report.assertions.push(hflow_core::validation::Check {
                name: format!("{}: {}", suite.name(), c.name),
                ..c.clone()
            });
        }
        let _ = writeln!(text, "{}", r.summary_line());
        report.suites.push(r);
    }
    report.artifact("validate.txt", &text)?;
    Ok(())
}

fn cross(report: &mut RunReport) -> Result<(), CliError> {
    let cfg = report.config.clone();
    let frame = load(&cfg)?.frame;
    describe_frame(report, &frame);
    let cv = cross_validate(&frame, cfg.t_end, cfg.dt).map_err(CliError::numerical)?;
    report.artifact("cross_validate.csv", &cv.to_csv())?;
    report.result("dt_used", cv.dt);
    report.result("max_deviation", cv.max_deviation);
    report.result("initial_rate", cv.initial_rate);
    report.result("pde_termination", &cv.pde_termination);
    report.result("gauge_blowups", cv.gauge_blowups.len());
    report.result(
        "final_time",
        json!(cv.times.last().copied().unwrap_or(0.0)),
    );
    report.assert("max relative deviation", cv.max_deviation, cfg.tolerance("deviation", 1e-5));
    Ok(())
}

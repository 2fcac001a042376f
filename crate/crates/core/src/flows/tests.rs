use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::*;
use crate::calculus::canonical_metric;
use crate::catalog::{builtin, perturbation, MatrixFormula};
use crate::grid::Chart;

fn torus(dim: usize, res: usize) -> Arc<Chart> {
    Arc::new(Chart::periodic(dim, res, 2.0 * PI).unwrap())
}

fn perturbed(res: usize, seed: u64, amp: f64) -> FrameField {
    let chart = torus(2, res);
    let r = perturbation(seed, amp, 2, &chart).unwrap();
    FrameField::analytic(chart, r.formula).unwrap()
}

fn heisenberg(res: usize) -> FrameField {
    let r = builtin("heisenberg").unwrap();
    FrameField::analytic(r.default_chart(res).unwrap(), r.formula).unwrap()
}

fn drift(trace: &FlowTrace, frame0: &FrameField) -> f64 {
    trace.final_state.geometry.frame.value.sup_diff(&frame0.values()).unwrap()
}

#[test]
fn fixed_points_stay_put() {
    let identity = FrameField::analytic(torus(2, 16), MatrixFormula::identity(2)).unwrap();
    for frame in [identity, heisenberg(10)] {
        let t_end = 0.05;
        let trace = hf_pde_integrate(&frame, &FlowOptions::new(t_end, 1e-2)).unwrap();
        assert_eq!(trace.termination, Termination::Completed);
        assert!(drift(&trace, &frame) / t_end <= 1e-12, "{:e}", drift(&trace, &frame));
        assert!(trace.samples.iter().all(|s| s.sup_h <= 1e-12));
        let cv = cross_validate(&frame, t_end, 1e-2).unwrap();
        assert!(cv.max_deviation <= 1e-10, "{:e}", cv.max_deviation);
        assert_eq!(cv.times.len(), 6);
    }
}

#[test]
fn trace_records_increasing_times() {
    let f = perturbed(16, 0, 0.1);
    let opts = FlowOptions {
        sample_every: 2,
        keep_snapshots: true,
        ..FlowOptions::new(0.02, 3e-3)
    };
    let trace = hf_pde_integrate(&f, &opts).unwrap();
    assert_eq!(trace.termination, Termination::Completed);
    // 0.02 split into 7 equal steps
    assert!((trace.dt - 0.02 / 7.0).abs() < 1e-15);
    let times: Vec<f64> = trace.samples.iter().map(|s| s.t).collect();
    assert_eq!(times.len(), 5);
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert!((times.last().unwrap() - 0.02).abs() < 1e-15);
    assert!(trace.samples.iter().all(|s| s.sup_h > 1e-4 && s.sup_curvature > 1e-4));
    let csv = trace.to_csv();
    assert_eq!(csv.lines().count(), 6);
    let file = trace.snapshot_file().unwrap();
    assert_eq!(file.fields.len(), 5);
    assert!(matches!(
        hf_pde_integrate(&f, &FlowOptions::new(0.1, 0.0)),
        Err(HflowError::Config(_))
    ));
}

#[test]
fn time_stepping_is_fourth_order() {
    // dt well inside the RK4 stability region for 16 spectral modes
    let f = perturbed(16, 1, 0.2);
    let run = |dt| {
        let tr = hf_pde_integrate(&f, &FlowOptions::new(0.1, dt)).unwrap();
        tr.final_state.geometry.frame.value
    };
    let (a, b, c) = (run(0.02), run(0.01), run(0.005));
    let ratio = a.sup_diff(&b).unwrap() / b.sup_diff(&c).unwrap();
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn near_singular_frames_flag_blow_up() {
    let value = DMatrix::identity(2, 2) * 5e-4;
    let f = FrameField::analytic(torus(2, 8), MatrixFormula::Constant { n: 2, value }).unwrap();
    let trace = hf_pde_integrate(&f, &FlowOptions::new(0.1, 0.01)).unwrap();
    assert!(matches!(trace.termination, Termination::BlowUp { t, .. } if t == 0.0));
}

#[test]
fn deturck_flow_starts_like_the_plain_flow() {
    let identity = FrameField::analytic(torus(2, 8), MatrixFormula::identity(2)).unwrap();
    let zero = reference_connection(&identity, ReferenceChoice::Zero).unwrap();
    let trace = deturck_pde_integrate(&identity, &zero, &FlowOptions::new(0.05, 0.01)).unwrap();
    assert!(drift(&trace, &identity) <= 1e-14);

    let f = perturbed(16, 2, 0.1);
    let initial = reference_connection(&f, ReferenceChoice::Initial).unwrap();
    let geo = Geometry::with_route(&f.to_sampled().unwrap(), ConnectionRoute::GridSecond).unwrap();
    assert!(deturck_operator(&geo, &initial).unwrap().sup() <= 1e-12);
    let opts = FlowOptions::new(0.02, 1e-2);
    let plain = hf_pde_integrate(&f, &opts).unwrap();
    let modified = deturck_pde_integrate(&f, &initial, &opts).unwrap();
    assert_eq!(plain.samples[0].sup_h, modified.samples[0].sup_h);
    let gap = plain.final_state.geometry.frame.value.sup_diff(&modified.final_state.geometry.frame.value).unwrap();
    assert!(gap.is_finite() && gap > 0.0);
}

#[test]
fn flat_gauge_nodes_do_not_move() {
    let geo = Geometry::new(&heisenberg(8)).unwrap();
    let node = GaugeNode::from_geometry(&geo, 100);
    let tr = gauge_ode_integrate(&node, 1.0, 0.25).unwrap();
    assert_eq!(tr.times.len(), 5);
    for m in &tr.matrices {
        assert!((m - DMatrix::identity(3, 3)).abs().max() <= 1e-12);
    }
    assert_eq!(tr.matrices[0], DMatrix::identity(3, 3));
    assert!(tr.to_csv().starts_with("t,a[0,0],a[0,1]"));
}

#[test]
fn gauge_slope_matches_the_flow_operator() {
    let f = perturbed(16, 0, 0.1);
    let geo = Geometry::with_route(&f, ConnectionRoute::Analytic).unwrap();
    let h = homogeneous_operator(&geo).unwrap();
    for idx in [0, 37, 200] {
        let node = GaugeNode::from_geometry(&geo, idx);
        let expected = mat(2, h.node(idx)) * &node.coframe;
        let step = 1e-6;
        let slope = (gauge_at(&node, step).unwrap() - gauge_at(&node, -step).unwrap()) / (2.0 * step);
        assert!((&slope - &expected).abs().max() <= 1e-6, "{slope} vs {expected}");
        assert!((node.initial_slope() - &expected).abs().max() <= 1e-12);
    }
}

#[test]
fn gauge_trajectories_respect_the_metric_law() {
    let f = perturbed(16, 3, 0.1);
    let geo = Geometry::with_route(&f, ConnectionRoute::Analytic).unwrap();
    let nodes = GaugeNode::all(&geo);
    let trs: Vec<GaugeTrajectory> = nodes.iter().map(|n| gauge_ode_integrate(n, 0.05, 0.01).unwrap()).collect();
    let chart = f.chart().clone();
    for k in [1, 5] {
        let rebuilt = TensorField::from_node_fn(chart.clone(), f.values().signature().to_vec(), |node, _, out| {
            write_mat(&(&trs[node].matrices[k] * &nodes[node].frame), out)
        });
        let frame_t = FrameField::sampled(rebuilt).unwrap();
        let g = canonical_metric(&frame_t).unwrap();
        let mut worst: f64 = 0.0;
        for (node, tr) in trs.iter().enumerate() {
            let a = &tr.matrices[k];
            let law = a * &nodes[node].metric_inverse * a.transpose();
            worst = worst.max((law - mat(2, g.inverse.node(node))).abs().max());
            assert!(frame_t.values().node(node).iter().all(|v| v.is_finite()));
        }
        assert!(worst <= 1e-8, "{worst:e}");
    }
}

#[test]
fn subgroup_exponential() {
    let z = DMatrix::<f64>::zeros(3, 3);
    assert_eq!(exp_subgroup(&z, 2.0), DMatrix::identity(3, 3));
    let mut nil = DMatrix::zeros(3, 3);
    nil[(0, 2)] = 1.5;
    nil[(1, 2)] = -0.5;
    let t = 0.7;
    assert!((exp_subgroup(&nil, t) - (DMatrix::identity(3, 3) + &nil * t)).abs().max() <= 1e-14);
    let m = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.4, 0.1]);
    let h = 1e-5;
    let slope = (exp_subgroup(&m, h) - exp_subgroup(&m, -h)) / (2.0 * h);
    assert!((slope - &m).abs().max() <= 1e-9);
}

#[test]
fn scalar_model_blows_up_on_time() {
    let run = scalar_blowup(1.0, 0.5, 2.0, 200).unwrap();
    assert_eq!(run.t_star, Some(1.0));
    let b = run.numeric_blow_up.clone().unwrap();
    assert!((b.estimate() - 1.0).abs() <= 1e-3, "{b:?}");
    assert!(run.numeric.len() <= 101);
    for (a, c) in run.numeric.iter().zip(&run.closed_form).take(90) {
        assert!((a - c).abs() <= 1e-7 * c.abs());
    }
    let flat = scalar_blowup(1.3, 0.0, 5.0, 50).unwrap();
    assert!(flat.t_star.is_none() && flat.numeric_blow_up.is_none());
    assert!(flat.numeric.iter().all(|a| (a - 1.3).abs() <= 1e-10));
    let decay = scalar_blowup(1.0, -1.0, 10.0, 100).unwrap();
    assert!(decay.numeric_blow_up.is_none() && decay.t_star.is_none());
    assert!(decay.numeric.windows(2).all(|w| w[1] < w[0]));
    assert!((decay.numeric.last().unwrap() - 1.0 / 21f64.sqrt()).abs() <= 1e-8);
    let mut last = f64::INFINITY;
    for r in [0.25, 0.5, 1.0, 2.0] {
        let t = scalar_blowup(1.0, r, 5.0, 100).unwrap().numeric_blow_up.unwrap().estimate();
        assert!(t < last);
        last = t;
    }
    assert!(scalar_blowup(0.0, 1.0, 1.0, 10).is_err());
}

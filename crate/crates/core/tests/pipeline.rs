use std::f64::consts::PI;
use std::sync::Arc;

use hflow_core::calculus::{ConnectionRoute, Geometry};
use hflow_core::catalog::{builtin, perturbation};
use hflow_core::flows::{hf_pde_integrate, FlowOptions, Termination};
use hflow_core::grid::FieldFile;
use hflow_core::{Chart, FrameField};

fn perturbed(res: usize) -> FrameField {
    let chart = Arc::new(Chart::periodic(2, res, 2.0 * PI).unwrap());
    let r = perturbation(4, 0.15, 2, &chart).unwrap();
    FrameField::analytic(chart, r.formula).unwrap()
}

#[test]
fn frames_survive_a_field_file_round_trip() {
    let frame = perturbed(16);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frame.json");
    FieldFile::from_fields(frame.chart(), &[("frame", &frame.values())]).unwrap().write(&path).unwrap();
    let (chart, fields) = FieldFile::read(&path).unwrap().to_fields().unwrap();
    assert_eq!(chart.as_ref(), frame.chart().as_ref());
    assert_eq!(fields[0].1.data(), frame.values().data());
}

#[test]
fn sampled_torsion_tracks_the_analytic_value() {
    let r = builtin("heisenberg").unwrap();
    let mut errs = Vec::new();
    for res in [12, 24] {
        let frame = FrameField::analytic(r.default_chart(res).unwrap(), r.formula.clone()).unwrap();
        let exact = Geometry::with_route(&frame, ConnectionRoute::Analytic).unwrap().torsion();
        let grid = Geometry::with_route(&frame.to_sampled().unwrap(), ConnectionRoute::GridSecond).unwrap();
        errs.push(grid.torsion().sup_diff(&exact).unwrap());
    }
    assert!(errs[1] < 1e-9 || errs[1] < errs[0] / 3.0, "{errs:?}");
}

#[test]
fn flow_is_reproducible_from_a_stored_frame() {
    let frame = perturbed(16);
    let opts = FlowOptions::new(0.01, 2e-3);
    let direct = hf_pde_integrate(&frame.to_sampled().unwrap(), &opts).unwrap();
    let text = FieldFile::from_fields(frame.chart(), &[("frame", &frame.values())]).unwrap().to_json();
    let (_, fields) = FieldFile::from_json(&text).unwrap().to_fields().unwrap();
    let stored = FrameField::sampled(fields[0].1.clone()).unwrap();
    let again = hf_pde_integrate(&stored, &opts).unwrap();
    assert_eq!(direct.termination, Termination::Completed);
    assert_eq!(direct.to_csv(), again.to_csv());
}

#[test]
fn snapshots_pack_into_one_file() {
    let mut opts = FlowOptions::new(0.006, 2e-3);
    opts.keep_snapshots = true;
    let trace = hf_pde_integrate(&perturbed(12).to_sampled().unwrap(), &opts).unwrap();
    let file = trace.snapshot_file().unwrap();
    let (_, fields) = FieldFile::from_json(&file.to_json()).unwrap().to_fields().unwrap();
    assert_eq!(fields.len(), trace.samples.len());
    assert!(fields[0].0.starts_with("frame@t="));
    let last = &trace.snapshots.last().unwrap().1;
    assert_eq!(fields.last().unwrap().1.data(), last.data());
}

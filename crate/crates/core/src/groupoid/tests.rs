use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::calculus::{Geometry, ConnectionRoute};
use crate::catalog::{builtin, perturbation, warped, MatrixFormula};
use crate::frame::FrameField;
use crate::grid::Chart;

fn analytic(name: &str, res: usize) -> FrameField {
    let r = builtin(name).unwrap();
    FrameField::analytic(r.default_chart(res).unwrap(), r.formula).unwrap()
}

fn perturbed(res: usize, seed: u64) -> FrameField {
    let chart = Arc::new(Chart::periodic(3, res, 2.0 * PI).unwrap());
    let r = perturbation(seed, 0.1, 2, &chart).unwrap();
    FrameField::analytic(chart, r.formula).unwrap()
}

fn identity_frame() -> FrameField {
    let chart = Arc::new(Chart::open_box(2, 8, -1.0, 1.0).unwrap());
    FrameField::analytic(chart, MatrixFormula::identity(2)).unwrap()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cocycle_and_identity(pts in prop::collection::vec(0.0..2.0 * PI, 9)) {
        let f = perturbed(8, 3);
        let s = TwoPointSplitting::new(&f);
        let (x, z, y) = (&pts[0..3], &pts[3..6], &pts[6..9]);
        let lhs = s.eval(z, y).unwrap() * s.eval(x, z).unwrap();
        prop_assert!((lhs - s.eval(x, y).unwrap()).abs().max() <= 1e-8);
        prop_assert!((s.eval(x, x).unwrap() - DMatrix::identity(3, 3)).abs().max() <= 1e-10);
    }

    #[test]
    fn heisenberg_groupoid_is_flat(pts in prop::collection::vec(-0.9..0.9f64, 6)) {
        let f = analytic("heisenberg", 8);
        let r = groupoid_curvature(&TwoPointSplitting::new(&f), &pts[0..3], &pts[3..6]).unwrap();
        prop_assert!(sup(&r) <= 1e-8);
    }
}

#[test]
fn groupoid_curvature_vanishes_on_the_diagonal_only() {
    let f = perturbed(8, 5);
    let s = TwoPointSplitting::new(&f);
    let x = [0.4, 1.3, 2.2];
    assert!(sup(&groupoid_curvature(&s, &x, &x).unwrap()) <= 1e-12);
    assert!(sup(&groupoid_curvature(&s, &x, &[1.0, 2.0, 0.5]).unwrap()) > 1e-3);
}

#[test]
fn outside_chart_is_an_error() {
    let f = analytic("heisenberg", 8);
    let s = TwoPointSplitting::new(&f);
    assert!(matches!(s.eval(&[0.0; 3], &[2.0, 0.0, 0.0]), Err(HflowError::OutsideChart(_))));
}

#[test]
fn linearization_recovers_algebroid_curvature() {
    let f = perturbed(8, 11);
    let geo = Geometry::with_route(&f, ConnectionRoute::Analytic).unwrap();
    let r = geo.algebroid_curvature();
    let s = TwoPointSplitting::new(&f);
    let n = 3;
    for node in [0, 77, 300] {
        let x = f.chart().coordinates(node);
        assert!(sup(&linearize_groupoid_curvature(&s, &x, &[0.0; 3]).unwrap()) == 0.0);
        for m in 0..n {
            let mut xi = vec![0.0; n];
            xi[m] = 1.0;
            let lin = linearize_groupoid_curvature(&s, &x, &xi).unwrap();
            let rv = r.node(node);
            let mut worst: f64 = 0.0;
            for c in 0..n * n * n {
                worst = worst.max((lin[c] - rv[c * n + m]).abs());
            }
            assert!(worst <= 1e-6, "node {node} axis {m}: {worst:e}");
        }
        assert!(sup(r.node(node)) > 1e-3);
    }
    let h = analytic("heisenberg", 8);
    let lin = linearize_groupoid_curvature(&TwoPointSplitting::new(&h), &[0.2, -0.3, 0.1], &[0.5, 1.0, -2.0]).unwrap();
    assert!(sup(&lin) <= 1e-8);
}

#[test]
fn identity_frame_develops_translations() {
    let f = identity_frame();
    let (p, q) = ([-0.5, 0.2], [-0.6, -0.3]);
    let path = Path::new(vec![p.to_vec(), vec![0.3, 0.4], vec![0.5, -0.1]]).unwrap();
    let d = develop(&f, &p, &q, &path, 40).unwrap();
    for smp in &d.samples {
        for a in 0..2 {
            assert!((smp.value[a] - (smp.point[a] + q[a] - p[a])).abs() <= 1e-12);
        }
    }
    assert!(d.residual <= 1e-10, "{:e}", d.residual);
    assert!((d.terminal_jet.clone() - DMatrix::identity(2, 2)).abs().max() <= 1e-12);
    let m = monodromy(&f, &Path::square(&p, 0, 1, 0.5).unwrap(), 40).unwrap();
    assert!(m.displacement_norm() <= 1e-14 && m.jet_deviation <= 1e-14);
    let t = tilde_splitting(&f, &p, &[0.3, 0.3], 1e-4, 10).unwrap();
    assert!((t - DMatrix::identity(2, 2)).abs().max() <= 1e-10);
}

#[test]
fn heisenberg_developments_are_exact() {
    let f = analytic("heisenberg", 8);
    let p = [0.0, 0.0, 0.0];
    let q = [0.1, -0.2, 0.05];
    let d = develop(&f, &p, &q, &Path::segment(&p, &[0.5, 0.5, 0.5]).unwrap(), 1000).unwrap();
    assert!(d.residual <= 1e-8, "{:e}", d.residual);
    assert!(d.samples.len() >= DEVELOP_SAMPLES && d.samples.len() <= DEVELOP_SAMPLES + 2);
    assert!(d.terminal_jet.determinant().abs() > 0.5);
    // left translation by q: f(x) = q·x with (a·b)_3 = a_3 + b_3 + a_1 b_2
    let x = [0.5, 0.5, 0.5];
    let expected = [q[0] + x[0], q[1] + x[1], q[2] + x[2] + q[0] * x[1]];
    for a in 0..3 {
        assert!((d.terminal_value[a] - expected[a]).abs() <= 1e-12);
    }
    let csv = d.to_csv();
    assert!(csv.starts_with("s,c0,c1,c2,f0,f1,f2,residual\n"));
    assert_eq!(csv.lines().count(), d.samples.len() + 1);
}

#[test]
fn heisenberg_loops_close() {
    let f = analytic("heisenberg", 8);
    let p = [0.1, -0.2, 0.0];
    for (a, b) in [(0, 1), (1, 2), (0, 2)] {
        let m = monodromy(&f, &Path::square(&p, a, b, 0.6).unwrap(), 1000).unwrap();
        assert!(m.displacement_norm() <= 1e-7 && m.jet_deviation <= 1e-7, "{}", m.report());
        let m = monodromy_from(&f, &Path::square(&p, a, b, 0.6).unwrap(), &[0.2, 0.1, -0.3], 1000).unwrap();
        assert!(m.displacement_norm() <= 1e-7 && m.jet_deviation <= 1e-7, "{}", m.report());
    }
    let lp = Path::polygon(vec![p.to_vec(), vec![0.5, 0.3, -0.4], vec![-0.3, 0.6, 0.5]]).unwrap();
    let m = monodromy_from(&f, &lp, &[-0.2, 0.1, 0.3], 1000).unwrap();
    assert!(m.displacement_norm() <= 1e-7 && m.jet_deviation <= 1e-7);
    assert!(m.report().contains("jet deviation"));
}

#[test]
fn perturbed_frames_report_failure_without_erroring() {
    let f = perturbed(8, 2);
    let p = [1.0, 2.0, 3.0];
    let q = [1.5, 1.5, 3.5];
    let d = develop(&f, &p, &q, &Path::segment(&p, &[2.0, 3.0, 2.5]).unwrap(), 200).unwrap();
    assert!(d.residual.is_finite() && d.residual > 1e-4, "{:e}", d.residual);
    let lp = Path::square(&p, 0, 1, 1.0).unwrap();
    let m = monodromy_from(&f, &lp, &q, 400).unwrap();
    assert!(m.displacement_norm() > 1e-5, "{}", m.report());
    // the identity solves the frame PDE for every frame
    let m = monodromy(&f, &lp, 400).unwrap();
    assert!(m.displacement_norm() <= 1e-12, "{}", m.report());
}

#[test]
fn leaving_the_chart_is_a_continuation_failure() {
    let f = analytic("heisenberg", 8);
    let p = [0.0, 0.0, 0.0];
    let err = develop(&f, &p, &[0.9, 0.0, 0.0], &Path::segment(&p, &[0.5, 0.0, 0.0]).unwrap(), 100).unwrap_err();
    match err {
        HflowError::ContinuationFailure { s, .. } => assert!(s > 0.05 && s < 0.15, "{s}"),
        other => panic!("unexpected {other:?}"),
    }
    let path = Path::segment(&[0.0, 0.0, 0.0], &[0.5, 0.0, 0.0]).unwrap();
    assert!(matches!(develop(&f, &[0.1, 0.0, 0.0], &p, &path, 10), Err(HflowError::Config(_))));
}

#[test]
fn tilde_splitting_reproduces_the_connection() {
    let f = analytic("heisenberg", 8);
    let p = [0.2, -0.1, 0.3];
    let h = default_step(&f);
    let same = tilde_splitting(&f, &p, &p, h, 50).unwrap();
    assert!((same - DMatrix::identity(3, 3)).abs().max() <= 1e-12);
    // right translation by p⁻¹q has a single off-diagonal entry q_2 − p_2
    let q = [0.5, 0.4, -0.2];
    let t = tilde_splitting(&f, &p, &q, h, 50).unwrap();
    let mut expected = DMatrix::identity(3, 3);
    expected[(2, 0)] = q[1] - p[1];
    assert!((t - expected).abs().max() <= 1e-8);
    for x in [[0.0, 0.0, 0.0], [0.3, -0.4, 0.2]] {
        let tc = tilde_connection_at(&f, &x, 1e-3, 20).unwrap();
        let g = crate::validation::oracles::gamma_at(f.formula().unwrap(), &x);
        let worst = tc.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-5, "{worst:e}");
    }
}

#[test]
fn solution_maps_commute_with_tilde_translations() {
    let f = analytic("heisenberg", 8);
    let steps = 100;
    // s ∈ 𝓢 sends a ↦ b; t̃ sends x ↦ f(p, x, q)
    let (a, b) = ([0.1, 0.1, -0.1], [0.2, -0.1, 0.15]);
    let (p, q) = ([-0.1, 0.2, 0.0], [0.15, 0.05, 0.1]);
    let s_map = |z: &[f64]| solution_map(&f, &a, &b, z, steps).unwrap();
    let t_map = |x: &[f64]| {
        let (x, p, q) = (x.to_vec(), p.to_vec(), q.to_vec());
        solution_map(&f, &p, &x, &q, steps).unwrap()
    };
    for x in [[-0.05, 0.15, 0.05], [-0.15, 0.25, -0.05], [-0.1, 0.2, 0.0]] {
        let st = s_map(&t_map(&x));
        let ts = t_map(&s_map(&x));
        assert!(sup(&st.iter().zip(&ts).map(|(u, v)| u - v).collect::<Vec<_>>()) <= 1e-6);
    }
}

fn warp_inverse(y: f64, amp: f64) -> f64 {
    let mut x = y;
    for _ in 0..60 {
        x -= (x + amp * x.sin() - y) / (1.0 + amp * x.cos());
    }
    x
}

#[test]
fn developments_converge_at_fourth_order() {
    let amp = 0.3;
    let r = warped(2, amp).unwrap();
    let f = FrameField::analytic(r.default_chart(16).unwrap(), r.formula).unwrap();
    let phi = |x: f64| x + amp * x.sin();
    let (p, q, end) = ([0.5, 1.0], [0.7, 0.9], [2.5, 3.0]);
    let exact: Vec<f64> = (0..2).map(|a| warp_inverse(phi(end[a]) - phi(p[a]) + phi(q[a]), amp)).collect();
    let path = Path::segment(&p, &end).unwrap();
    let run = |steps| develop(&f, &p, &q, &path, steps).unwrap();
    let (coarse, fine) = (run(16), run(32));
    let err = |d: &Development| sup(&d.terminal_value.iter().zip(&exact).map(|(u, v)| u - v).collect::<Vec<_>>());
    let ratio = err(&coarse) / err(&fine);
    assert!((13.0..19.0).contains(&ratio), "terminal error ratio {ratio}");
    // residual developments use rounded step counts, so the ratio approaches 16 more slowly
    let ratio = coarse.residual / fine.residual;
    assert!(ratio > 12.0, "residual ratio {ratio}");
}

#[test]
fn sampled_frames_develop_through_interpolation() {
    let f = analytic("heisenberg", 8).to_sampled().unwrap();
    let p = [0.0, 0.0, 0.0];
    let d = develop(&f, &p, &[0.1, 0.2, 0.0], &Path::segment(&p, &[0.4, 0.3, -0.2]).unwrap(), 40).unwrap();
    assert!(d.residual <= 1e-6, "{:e}", d.residual);
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use hflow_core::catalog::builtin;
use hflow_core::frame::FRAME_SIGNATURE;
use hflow_core::grid::{Chart, FieldFile, TensorField};
use hflow_core::FrameField;
use serde_json::Value;

fn hflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hflow"))
        .args(args)
        .env_remove("HFLOW_OUT")
        .output()
        .expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn inspect_heisenberg_reports_flat_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hflow(&["inspect", "--frame", "heisenberg", "--res", "12", "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(tmp.path());
    assert_eq!(r["status"], "pass");
    assert!(r["results"]["sup_algebroid_curvature"].as_f64().unwrap() <= 1e-10);
    assert!(r["results"]["sup_tilde_curvature"].as_f64().unwrap() <= 1e-10);
    assert_eq!(r["results"]["torsion_at_centre"]["T[2,0,1]"].as_f64().unwrap(), 1.0);
    assert_eq!(r["config"]["resolution"], 12);
    assert_eq!(r["config"]["t_end"], 0.05);
    for a in r["assertions"].as_array().unwrap() {
        assert!(a["tolerance"].is_number() && a["measured"].is_number() && a["passed"] == true);
    }
    assert!(tmp.path().join("inspect_fields.json").exists());
}

#[test]
fn flow_csv_is_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["flow", "--res", "16", "--t-end", "0.01", "--dt", "2e-3"];
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let mut v = args.to_vec();
        let out = out_arg(dir.path());
        v.extend(["--threads", threads, "--out", &out]);
        assert_eq!(code(&hflow(&v)), 0);
    }
    let ca = std::fs::read(a.path().join("flow.csv")).unwrap();
    let cb = std::fs::read(b.path().join("flow.csv")).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    let times: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(times.len(), 6);
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn develop_writes_a_development_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hflow(&[
        "develop", "--frame", "heisenberg", "--from", "0,0,0", "--to", "0.5,0.5,0.5", "--out", &out_arg(tmp.path()),
    ]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(tmp.path().join("develop.csv")).unwrap();
    assert!(csv.starts_with("s,c0,c1,c2,f0,f1,f2,residual\n"));
    assert!(report(tmp.path())["results"]["residual"].as_f64().unwrap() <= 1e-8);

    let o = hflow(&["develop", "--frame", "heisenberg", "--loop", "0,1,0.5", "--initial", "0.1,0,0", "--steps", "200", "--out", &out_arg(tmp.path())]);
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("monodromy.txt").exists());
}

#[test]
fn config_file_supplies_values_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "frame = \"abelian\"\nresolution = 8\nt_end = 0.02\ndt = 0.01\n").unwrap();
    let out = tmp.path().join("out");
    let o = hflow(&["flow", "--config", cfg.to_str().unwrap(), "--dt", "0.005", "--out", &out_arg(&out)]);
    assert_eq!(code(&o), 0);
    let r = report(&out);
    assert_eq!(r["config"]["frame"], "abelian");
    assert_eq!(r["config"]["dt"], 0.005);
    assert_eq!(r["results"]["samples"], 5);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_hflow"))
        .args(["gauge-ode", "--scalar", "1,0.5", "--t-end", "2", "--dt", "0.01"])
        .env("HFLOW_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("scalar_blowup.csv").exists());
}

#[test]
fn failed_assertions_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hflow(&[
        "develop", "--from", "0,0,0", "--to", "0.3,0,0", "--steps", "20", "--tol", "residual=0", "--out",
        &out_arg(tmp.path()),
    ]);
    assert_eq!(code(&o), 1);
    assert_eq!(report(tmp.path())["status"], "fail");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path());
    assert_eq!(code(&hflow(&["frobnicate"])), 2);
    assert_eq!(code(&hflow(&["flow", "--no-such-flag"])), 2);
    assert_eq!(code(&hflow(&["inspect", "--frame", "sphere", "--out", &out])), 2);
    assert_eq!(code(&hflow(&["flow", "--dt", "-1", "--out", &out])), 2);
    assert_eq!(code(&hflow(&["validate", "--suite", "nope", "--out", &out])), 2);
    assert_eq!(code(&hflow(&["develop", "--out", &out])), 2);
    assert_eq!(code(&hflow(&["gauge-ode", "--res", "8", "--node", "100000", "--out", &out])), 2);
    assert_eq!(code(&hflow(&["flow", "--frame", "perturbation:amp=0.9", "--out", &out])), 2);
}

fn write_frame_file(dir: &Path, values: &TensorField) -> PathBuf {
    let path = dir.join("frame.json");
    FieldFile::from_fields(values.chart(), &[("frame", values)]).unwrap().write(&path).unwrap();
    path
}

#[test]
fn field_files_load_and_faults_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(&tmp.path().join("out"));
    let r = builtin("heisenberg").unwrap();
    let good = FrameField::analytic(r.default_chart(10).unwrap(), r.formula).unwrap().values();
    let path = write_frame_file(tmp.path(), &good);
    let spec = format!("file:{}", path.display());
    assert_eq!(code(&hflow(&["inspect", "--frame", &spec, "--out", &out])), 0);

    // corrupt document: a usage error
    let broken = tmp.path().join("broken.json");
    std::fs::write(&broken, "{\"format_version\": 1, \"chart\": ").unwrap();
    let o = hflow(&["inspect", "--frame", &format!("file:{}", broken.display()), "--out", &out]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&hflow(&["inspect", "--frame", "file:/no/such/file.json", "--out", &out])), 2);

    // well-formed file with a non-finite frame: a numerical failure, still reported
    let chart = Arc::new(Chart::open_box(2, 8, -1.0, 1.0).unwrap());
    let mut data = vec![0.0; 64 * 4];
    for node in 0..64 {
        data[node * 4] = 1.0;
        data[node * 4 + 3] = 1.0;
    }
    data[17] = f64::NAN;
    let bad = TensorField::from_data(chart, FRAME_SIGNATURE.to_vec(), data).unwrap();
    let nan_dir = tempfile::tempdir().unwrap();
    let path = write_frame_file(nan_dir.path(), &bad);
    let o = hflow(&["inspect", "--frame", &format!("file:{}", path.display()), "--out", &out]);
    assert_eq!(code(&o), 3);
    let r = report(&tmp.path().join("out"));
    assert_eq!(r["status"], "error");
    assert!(r["error"].as_str().unwrap().contains("non-finite"));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mfland(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfland")).args(args).env("MFLAND_THREADS", "2").output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn diag21(dir: &TempDir) -> String {
    write(dir.path(), "x.csv", "2,0,0\n0,1,0\n").to_str().unwrap().to_owned()
}

/// A fixed 3 x 4 matrix with distinct singular values.
fn random34(dir: &TempDir) -> String {
    let body = "0.3012,-1.2290,0.7734,0.0591\n-0.8841,0.4417,1.5302,-0.6623\n1.1178,0.9046,-0.2515,0.4380\n";
    write(dir.path(), "r.csv", body).to_str().unwrap().to_owned()
}

#[test]
fn spectrum_of_smallest_selection() {
    let d = TempDir::new().unwrap();
    let v = json(&mfland(&["spectrum", "--x", &diag21(&d), "--k", "1", "--select", "2"]));
    assert_eq!(v["schema_version"], 1);
    let r = &v["result"]["report"];
    assert!((r["lambda_min"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(r["inertia"], serde_json::json!([3, 1, 1]));
    let vals: Vec<f64> = r["eigenvalues"].as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect();
    for (got, want) in vals.iter().zip([-1.0, 0.0, 1.0, 2.0, 3.0]) {
        assert!((got - want).abs() < 1e-12, "{vals:?}");
    }
    assert_eq!(v["result"]["family"], "full_rank_scaled");
}

#[test]
fn spectrum_dispatches_by_family() {
    let d = TempDir::new().unwrap();
    let x = diag21(&d);
    let c0 = write(d.path(), "c0.csv", "1.7320508075688772\n");
    let zf = json(&mfland(&["spectrum", "--x", &x, "--k", "1", "--c0", c0.to_str().unwrap()]));
    assert_eq!(zf["result"]["family"], "zero_family");
    assert!((zf["result"]["report"]["lambda_min"].as_f64().unwrap() + 1.0).abs() < 1e-12);

    let def = json(&mfland(&["spectrum", "--x", &x, "--k", "2", "--select", "2"]));
    assert_eq!(def["result"]["family"], "deficient_rank");
    assert_eq!(def["result"]["report"]["eigenvalues"].as_array().unwrap().len(), 10);

    let bal = json(&mfland(&["spectrum", "--x", &x, "--k", "1", "--select", "2", "--balanced"]));
    assert_eq!(bal["result"]["family"], "balanced");
    assert!((bal["result"]["report"]["lambda_min"].as_f64().unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn spectrum_csv_has_one_row_per_eigenpair() {
    let d = TempDir::new().unwrap();
    let out = mfland(&["spectrum", "--x", &diag21(&d), "--k", "1", "--select", "2", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "value,provenance,coupling");
    assert_eq!(lines.len(), 6);
}

#[test]
fn classify_constructed_points() {
    let d = TempDir::new().unwrap();
    let x = diag21(&d);
    let min = json(&mfland(&["classify", "--x", &x, "--k", "1", "--select", "1"]));
    assert_eq!(min["result"]["classification"]["kind"], "GlobalMinimum");
    let sad = json(&mfland(&["classify", "--x", &x, "--k", "1", "--select", "2"]));
    let c = &sad["result"]["classification"];
    assert_eq!(c["kind"], "StrictSaddle");
    assert_eq!(c["p"], 1);
    assert!((c["lambda_min_closed_form"].as_f64().unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn classify_supplied_point_in_user_frame() {
    let d = TempDir::new().unwrap();
    // tall X: the tool transposes internally and the user frame must still work
    let x = write(d.path(), "xt.csv", "2,0\n0,1\n0,0\n");
    let w = write(d.path(), "w.csv", "0\n1\n0\n");
    let s = write(d.path(), "s.csv", "0,1\n");
    let v = json(&mfland(&[
        "classify",
        "--x",
        x.to_str().unwrap(),
        "--w",
        w.to_str().unwrap(),
        "--s",
        s.to_str().unwrap(),
    ]));
    assert_eq!(v["data"]["transposed"], true);
    assert_eq!(v["result"]["classification"]["kind"], "StrictSaddle");
    assert_eq!(v["result"]["selection"], serde_json::json!([2]));
}

#[test]
fn classify_rejects_non_critical_point() {
    let d = TempDir::new().unwrap();
    let w = write(d.path(), "w.csv", "1\n1\n");
    let s = write(d.path(), "s.csv", "1,1,1\n");
    let out = mfland(&["classify", "--x", &diag21(&d), "--w", w.to_str().unwrap(), "--s", s.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn orbit_scaled_bound() {
    let d = TempDir::new().unwrap();
    let v = json(&mfland(&["orbit", "--x", &diag21(&d), "--k", "1", "--select", "2", "--scale", "2"]));
    let r = &v["result"];
    assert!((r["lambda_min_bound"].as_f64().unwrap() + 0.25).abs() < 1e-15);
    let after = r["lambda_min_after"].as_f64().unwrap();
    assert!(after <= -0.25 && after > -1.0);
    assert_eq!(r["inertia_before"], r["inertia_after"]);
}

#[test]
fn orbit_with_group_file() {
    let d = TempDir::new().unwrap();
    let a = write(d.path(), "a.csv", "3,1\n0,0.5\n");
    let v =
        json(&mfland(&["orbit", "--x", &random34(&d), "--k", "2", "--select", "1,3", "--group", a.to_str().unwrap()]));
    let r = &v["result"];
    assert!(r["lambda_min_after"].as_f64().unwrap() <= r["lambda_min_bound"].as_f64().unwrap() + 1e-12);
    assert!((r["j_before"].as_f64().unwrap() - r["j_after"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(r["inertia_before"], r["inertia_after"]);
}

#[test]
fn orbit_singular_group_is_input_error() {
    let d = TempDir::new().unwrap();
    let a = write(d.path(), "a.csv", "1,2\n2,4\n");
    let out = mfland(&["orbit", "--x", &random34(&d), "--k", "2", "--select", "1", "--group", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flow_writes_trajectory_and_diagnosis() {
    let d = TempDir::new().unwrap();
    let traj = d.path().join("traj.csv");
    let v = json(&mfland(&[
        "flow",
        "--x",
        &random34(&d),
        "--k",
        "2",
        "--seed",
        "3",
        "--balanced",
        "--trajectory",
        traj.to_str().unwrap(),
    ]));
    let r = &v["result"];
    assert_eq!(r["status"], "Converged");
    assert!(r["max_drift"].as_f64().unwrap() < 1e-8);
    assert!(r["max_ascent"].as_f64().unwrap() <= 1e-12);
    assert!(r["diagnosis"]["kind"].is_string());
    let text = std::fs::read_to_string(traj).unwrap();
    assert_eq!(text.lines().next(), Some("t,J,gradnorm,drift"));
    assert_eq!(text.lines().count() as u64, r["samples"].as_u64().unwrap() + 1);
}

#[test]
fn verify_random_matrix_passes() {
    let d = TempDir::new().unwrap();
    let out = mfland(&["verify", "--x", &random34(&d), "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = v["result"]["checks"].as_array().unwrap();
    assert!(checks.len() >= 20);
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn ragged_csv_is_input_error() {
    let d = TempDir::new().unwrap();
    let x = write(d.path(), "ragged.csv", "1,2,3\n4,5\n");
    let out = mfland(&["spectrum", "--x", x.to_str().unwrap(), "--k", "1", "--select", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn input_errors_exit_two() {
    let d = TempDir::new().unwrap();
    let x = diag21(&d);
    let cases: [&[&str]; 5] = [
        &["spectrum", "--x", "/nonexistent/x.csv", "--k", "1"],
        &["spectrum", "--x", &x, "--k", "1", "--select", "3"],
        &["spectrum", "--x", &x, "--select", "1"],
        &["spectrum", "--x", &x, "--k", "2", "--select", "1", "--scale", "2"],
        &["orbit", "--x", &x, "--k", "1", "--select", "1"],
    ];
    for args in cases {
        assert_eq!(mfland(args).status.code(), Some(2), "{args:?}");
    }
    let c0 = write(d.path(), "c0.csv", "1,2\n");
    let out = mfland(&["spectrum", "--x", &x, "--k", "1", "--c0", c0.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let d = TempDir::new().unwrap();
    let x = random34(&d);
    for args in [
        vec!["spectrum", "--x", &x, "--k", "2", "--select", "1,3", "--balanced"],
        vec!["verify", "--x", &x, "--seed", "11"],
        vec!["flow", "--x", &x, "--k", "1", "--seed", "5"],
    ] {
        let a = mfland(&args);
        let b = mfland(&args);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn output_flag_writes_file() {
    let d = TempDir::new().unwrap();
    let path = d.path().join("out.json");
    let out =
        mfland(&["classify", "--x", &diag21(&d), "--k", "1", "--select", "1", "--output", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["command"], "classify");
}

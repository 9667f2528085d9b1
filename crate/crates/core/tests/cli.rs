use std::path::PathBuf;
use std::process::{Command, Output};

use linetension::cli::{parse_csv, CELL_COLUMNS, ENVELOPE_COLUMNS, SELFENERGY_COLUMNS};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linetension")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn screw_selfenergy_row() {
    let tensor = fixture("tensor_prototype.json");
    let o = run(&["selfenergy", "--tensor", &tensor, "--burgers", "0,0,1", "--direction", "0,0,1", "--ntheta", "256", "--out", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let table = parse_csv(&stdout(&o), &SELFENERGY_COLUMNS).unwrap();
    assert_eq!(table.rows.len(), 1);
    let psi0 = table.float(0, "psi0").unwrap();
    assert!((psi0 - 0.079577).abs() < 1e-6, "{psi0}");
    assert!(table.float(0, "constraint_residual").unwrap() < 1e-10);
}

#[test]
fn check_measure_closed_loop() {
    let o = run(&["check-measure", "--measure", &fixture("square_loop.json"), "--dilute", "0.5,0.5"]);
    assert_eq!(o.status.code(), Some(0));
    let env: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(env["payload"]["frank_residual"], 0.0);
    assert_eq!(env["payload"]["dilute"]["ok"], true);
    assert_eq!(env["checksums"]["payload_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn open_measure_fails_validation() {
    let o = run(&["check-measure", "--measure", &fixture("open_segment.json")]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn malformed_measure_reports_position() {
    let o = run(&["check-measure", "--measure", &fixture("malformed.json")]);
    assert_eq!(o.status.code(), Some(3));
    let diag: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(diag["error"], "parse");
    assert!(diag["message"].as_str().unwrap().contains("line 4, column"), "{diag}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["selfenergy", "--ntheta", "many"]).status.code(), Some(2));
    assert_eq!(run(&["accept", "nonexistent-suite"]).status.code(), Some(3));
    assert_eq!(run(&["selfenergy", "--burgers", "1,2"]).status.code(), Some(3));
}

#[test]
fn solver_failures_exit_4_with_diagnostic() {
    // a tensor that is not positive definite on symmetric strains
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("soft.json");
    std::fs::write(&path, r#"{"mu": 0.0, "lambda": 0.0}"#).unwrap();
    let o = run(&["cell", "linear", "--tensor", path.to_str().unwrap()]);
    let code = o.status.code().unwrap();
    assert!(code == 3 || code == 4, "{code}");
    let diag: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(diag["exit_code"], code);
}

#[test]
fn payloads_are_deterministic_across_threads() {
    let tensor = fixture("tensor_nu03.json");
    let args = ["selfenergy", "--tensor", &tensor, "--level", "1", "--ntheta", "32", "--burgers", "1,1,0"];
    let a = run(&args);
    let b = run(&args);
    let mut threaded = vec!["--threads", "3"];
    threaded.extend_from_slice(&args);
    let c = run(&threaded);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let table = parse_csv(&stdout(&a), &SELFENERGY_COLUMNS).unwrap();
    assert_eq!(table.rows.len(), 42);
}

#[test]
fn json_checksum_covers_payload_only() {
    let m = fixture("square_loop.json");
    let a: serde_json::Value = serde_json::from_str(&stdout(&run(&["check-measure", "--measure", &m]))).unwrap();
    let b: serde_json::Value = serde_json::from_str(&stdout(&run(&["check-measure", "--measure", &m]))).unwrap();
    assert_eq!(a["checksums"], b["checksums"]);
    assert_eq!(a["payload"], b["payload"]);
}

#[test]
fn scan_then_envelope_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scan = dir.path().join("psi0.csv");
    let o = run(&[
        "selfenergy",
        "--tensor",
        &fixture("tensor_nu03.json"),
        "--bmax",
        "1.5",
        "--level",
        "1",
        "--ntheta",
        "32",
        "--out",
        scan.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("psi0.csv.envelope.json").exists());
    let o = run(&["envelope", "--psi0", scan.to_str().unwrap(), "--bmax", "1.5", "--level", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = parse_csv(&stdout(&o), &ENVELOPE_COLUMNS).unwrap();
    assert!(!table.rows.is_empty());
    for k in 0..table.rows.len() {
        assert!(table.float(k, "psi_tilde").unwrap() <= table.float(k, "psi0").unwrap() + 1e-12);
    }
}

#[test]
fn cell_rows_follow_schema() {
    let o = run(&["cell", "nonlinear", "--r", "0.1,0.05", "--lambda", "0.1", "--rotation", "0,0,1,0.3", "--mesh", "8,16"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = parse_csv(&stdout(&o), &CELL_COLUMNS).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.float(0, "value").unwrap() > 0.0);
}

#[test]
fn identities_suite_and_fault_injection() {
    let o = run(&["accept", "identities"]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&["accept", "identities", "--inject-fault", "broken-minor-symmetry"]);
    assert_eq!(o.status.code(), Some(1));
    let env: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let failed: Vec<&str> = env["payload"]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["tensor_frame_indifference"]);
}

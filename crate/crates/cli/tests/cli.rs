use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qsm(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qsm"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// One line, `error[E_CODE]: message`.
fn assert_error_line(o: &Output, code: &str) {
    assert!(!o.status.success());
    let text = stderr(o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    assert!(lines[0].starts_with(&format!("error[{code}]: ")), "{text}");
}

const SCHWARZSCHILD: &str = r#"{
  "n": 3, "lmax": 4, "r0": 3.0, "r_max": 3000.0,
  "initial": {"kind": "schwarzschild", "m": 1.0},
  "evolve": {"snapshots": 401},
  "window": {"r_min": 30.0},
  "probe": {"refine": false}
}"#;

const SEEDED: &str = r#"{
  "n": 3, "lmax": 4, "r0": 1.0, "r_max": 1000.0,
  "initial": {"kind": "seeded", "modes": [{"l": 1, "index": 1, "amplitude": 0.01}]},
  "evolve": {"snapshots": 120},
  "window": {"r_min": 30.0}
}"#;

fn evolved(dir: &Path, body: &str) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, "run.json", body);
    let o = qsm(&["evolve"], Some(&cfg), dir);
    assert!(o.status.success(), "{}", stderr(&o));
    (cfg, dir.join("metric.qsm"))
}

#[test]
fn schwarzschild_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, snap) = evolved(dir.path(), SCHWARZSCHILD);
    let res = json(&dir.path().join("residual.json"));
    assert!(res["max_sup"].as_f64().unwrap() < 1e-8);

    let o = qsm(&["analyze", snap.to_str().unwrap()], Some(&cfg), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let a = json(&dir.path().join("analysis.json"));
    assert!((a["mass"].as_f64().unwrap() - 1.0).abs() < 1e-6, "{}", a["mass"]);

    let o = qsm(&["static", snap.to_str().unwrap()], Some(&cfg), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&dir.path().join("static.json"));
    assert!(s["defect"].as_f64().unwrap() < 1e-8, "{}", s["defect"]);

    let o = qsm(&["imcf", snap.to_str().unwrap()], Some(&cfg), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,r,area,int_VH,Q,dQdt,gap");
    // 41 samples over 400 station intervals: every slice sits on a station.
    let q: Vec<f64> = lines.map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert_eq!(q.len(), 41);
    // Evolved lapse and numerically solved potential: constant to the
    // accuracy of the background, not to the closed-form tolerance.
    let limit = 2.0 * (4.0 * std::f64::consts::PI).sqrt();
    assert!(q.iter().all(|x| (x - limit).abs() < 1e-7));
    let side = json(&dir.path().join("trace.json"));
    assert!(side["max_increase"].as_f64().unwrap() < 1e-7);
}

#[test]
fn closed_form_traces_are_constant() {
    let dir = tempfile::tempdir().unwrap();
    let limit = 3.0 * (2.0 * std::f64::consts::PI.powi(2)).powf(1.0 / 3.0);
    for m in [0.0, 1.0] {
        let cfg = write_config(
            dir.path(),
            "closed.json",
            &format!(r#"{{"n": 4, "lmax": 4, "r0": 2.0, "r_max": 50.0, "imcf": {{"closed_form_mass": {m}}}}}"#),
        );
        let o = qsm(&["imcf"], Some(&cfg), dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        for line in csv.lines().skip(1) {
            let q: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
            assert!((q - limit).abs() < 1e-9, "m={m} Q={q}");
        }
        assert_eq!(json(&dir.path().join("trace.json"))["monotone"], Value::Bool(true));
    }
}

#[test]
fn zero_constant_lapse_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"n": 3, "lmax": 4, "r0": 1.0, "r_max": 10.0, "initial": {"kind": "constant", "value": 0.0}}"#,
    );
    let o = qsm(&["evolve"], Some(&cfg), dir.path());
    assert_error_line(&o, "E_CONFIG");
    assert!(!dir.path().join("metric.qsm").exists());
}

#[test]
fn guard_stops_a_large_constant_lapse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "guard.json",
        r#"{"n": 3, "lmax": 4, "r0": 1.0, "r_max": 10.0, "initial": {"kind": "constant", "value": 25.0}}"#,
    );
    let o = qsm(&["evolve"], Some(&cfg), dir.path());
    assert_error_line(&o, "E_GUARD");
}

#[test]
fn truncated_snapshot_fails_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, snap) = evolved(dir.path(), SCHWARZSCHILD);
    let bytes = std::fs::read(&snap).unwrap();
    std::fs::write(&snap, &bytes[..bytes.len() / 2]).unwrap();
    for sub in ["analyze", "static", "imcf"] {
        let o = qsm(&[sub, snap.to_str().unwrap()], Some(&cfg), dir.path());
        assert_error_line(&o, "E_CHECKSUM");
    }
}

#[test]
fn seeded_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, snap) = evolved(dir.path(), SEEDED);

    let o = qsm(&["analyze", snap.to_str().unwrap()], Some(&cfg), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let a = json(&dir.path().join("analysis.json"));
    assert!(a["l2_relation_gap"]["relative_to_prediction"].is_f64());
    assert!(a["potential_gaps"]["hat"]["absolute"].is_f64());

    let o = qsm(&["static", snap.to_str().unwrap()], Some(&cfg), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&dir.path().join("static.json"));
    let table = s["refinement"].as_array().unwrap();
    assert_eq!(table.len(), 2);
    assert_eq!(table[1]["lmax"], 8);
    for row in table {
        assert!(row["defect"].as_f64().unwrap() > 1e-8);
    }

    let o = qsm(&["imcf", snap.to_str().unwrap()], Some(&cfg), dir.path());
    assert_error_line(&o, "E_NOT_IMCF");
    assert!(stderr(&o).contains("not an IMCF"));
}

#[test]
fn verify_summary_and_selection() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsm(&["verify"], None, dir.path());
    assert!(o.status.success());
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["all_pass"], Value::Bool(true));
    assert_eq!(s, json(&dir.path().join("verify.json")));

    let o = qsm(&["verify", "--tolerance-scale", "1e-4"], None, dir.path());
    assert!(o.status.success());
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["all_pass"], Value::Bool(false));
    assert!(!s["failed"].as_array().unwrap().is_empty());

    let cfg = write_config(
        dir.path(),
        "empty.json",
        r#"{"n": 3, "lmax": 4, "r0": 1.0, "r_max": 10.0, "verify": {"select": []}}"#,
    );
    let o = qsm(&["verify"], Some(&cfg), dir.path());
    assert!(o.status.success());
    let s: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["all_pass"], Value::Bool(true));
    assert!(s["checks"].as_array().unwrap().is_empty());
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let (cfg, snap) = evolved(dir, SCHWARZSCHILD);
        assert!(qsm(&["imcf", snap.to_str().unwrap()], Some(&cfg), dir).status.success());
        assert!(qsm(&["analyze", snap.to_str().unwrap()], Some(&cfg), dir).status.success());
    }
    for f in ["metric.qsm", "residual.json", "trace.csv", "trace.json", "analysis.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsm(&["evolve"], None, dir.path());
    assert_error_line(&o, "E_CONFIG");
    let o = qsm(&["evolve"], Some(&dir.path().join("absent.json")), dir.path());
    assert_error_line(&o, "E_IO");
}

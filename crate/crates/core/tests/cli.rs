use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_almgren"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    fs::write(&p, body).unwrap();
    p
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

const SMALL: &str = r#"{
  "dimension": 2,
  "potential": {"kind": "aharonov_bohm", "alpha": 0.3},
  "grid": {"points": 200, "r_min_ratio": 1e-4},
  "eigen_count": 4,
  "verify": {"inequalities": false}
}"#;

#[test]
fn spectrum_prints_closed_form_values() {
    let out = bin().args(["--config"]).arg(scenario("ab_basic.json")).arg("spectrum").output().unwrap();
    assert!(out.status.success());
    let v = json_stdout(&out);
    let mu: Vec<f64> = v["mu"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    // (0.3 - j)² for j = 0, 1, -1, 2, ...
    let mut exact: Vec<f64> = (-10i32..=10).map(|j| (0.3 - j as f64).powi(2)).collect();
    exact.sort_by(f64::total_cmp);
    for (a, b) in mu.iter().zip(&exact) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn run_writes_report_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(&out_dir).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "pass");
    assert_eq!(report["schema_version"], 1);
    assert!(report["checks"]["frequency_constancy"]["pass"].as_bool().unwrap());
    for f in ["trace.csv", "profile.json", "spectrum.json"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("r,H,D,N"));
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), SMALL);
    let strip = |out: Output| {
        let mut v = json_stdout(&out);
        v.as_object_mut().unwrap().remove("wall_clock_seconds");
        v
    };
    let a = strip(bin().arg("--config").arg(&cfg).arg("run").output().unwrap());
    let b = strip(bin().arg("--config").arg(&cfg).arg("run").output().unwrap());
    assert_eq!(a, b);
}

#[test]
fn tol_scale_tightens_checks_into_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), SMALL);
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["--tol-scale", "1e-30", "run"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed checks"));
}

#[test]
fn invalid_field_is_named_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(
        dir.path(),
        r#"{"dimension": 2, "potential": {"kind": "aharonov_bohm", "alpha": 0.3},
            "perturbation": {"c": 0.05, "epsilon": -1.0}}"#,
    );
    let out = bin().arg("--config").arg(&cfg).arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("perturbation.epsilon"), "{err}");
}

#[test]
fn unknown_check_lists_valid_names() {
    let out = bin()
        .arg("--config")
        .arg(scenario("verify_only.json"))
        .args(["verify", "--check", "hardy,bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("diamagnetic"), "{err}");
}

#[test]
fn verify_subset_runs_only_requested_checks() {
    let out = bin()
        .arg("--config")
        .arg(scenario("verify_only.json"))
        .args(["verify", "--check", "positivity,hardy2d"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_stdout(&out);
    let names: Vec<&str> = v["inequalities"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["hardy2d"]);
    assert!(v["checks"]["positivity"]["pass"].as_bool().unwrap());
    assert!(v["checks"].get("mu1_comparison").is_none());
}

#[test]
fn missing_config_exits_two() {
    let out = bin().arg("spectrum").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kelvin_writes_transformed_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_scenario(dir.path(), SMALL);
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).arg("kelvin").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_stdout(&out);
    assert!(v["conjugacy_residual"].as_f64().unwrap() < 1e-8);
    assert_eq!(v["radii"].as_array().unwrap().len(), 20);
    assert!(dir.path().join("kelvin_field.csv").exists());
}

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

/// Run a command and return the exit code.
fn run(command: &str, config: &Path, out: &Path) -> i32 {
    let output = Command::new(env!("CARGO_BIN_EXE_orbitlab"))
        .args([command, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    output.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("config.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn find_brake_reports_closed_form_periods() {
    let out = TempDir::new().unwrap();
    assert_eq!(
        run("find-brake", &config("oscillator_brake.json"), out.path()),
        0
    );
    let alpha = [1.0, 2f64.sqrt(), 3f64.sqrt()];
    for (k, a) in alpha.iter().enumerate() {
        let orbit = read_json(&out.path().join(format!("brake_{k}.json")));
        assert_eq!(orbit["kind"], "brake");
        assert!((orbit["period"].as_f64().unwrap() - TAU / a).abs() < 1e-8);
        assert_eq!(orbit["nondegenerate"], true);
        assert_eq!(orbit["rest_points"].as_array().unwrap().len(), 2);
        let csv = fs::read_to_string(out.path().join(format!("brake_{k}.csv"))).unwrap();
        assert!(csv.starts_with("t,x1,x2,x3,v1,v2,v3,H\n"));
    }
}

#[test]
fn integrate_without_potential_is_a_straight_line() {
    let out = TempDir::new().unwrap();
    assert_eq!(
        run("integrate", &config("free_particle.json"), out.path()),
        0
    );
    let csv = fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,v1,v2,H"));
    let mut rows = 0;
    for line in lines {
        let row: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((row[1] - row[0]).abs() < 1e-12);
        assert_eq!(&row[2..], &[0.0, 1.0, 0.0, 0.5]);
        rows += 1;
    }
    assert!(rows > 1);
    let summary = read_json(&out.path().join("integrate.json"));
    assert_eq!(summary["t_end"], 10.0);
}

#[test]
fn oscillator_report_reproduces_the_example() {
    let out = TempDir::new().unwrap();
    assert_eq!(
        run(
            "oscillator-report",
            &config("oscillator_report.json"),
            out.path()
        ),
        0
    );
    let report = read_json(&out.path().join("oscillator_report.json"));
    assert_eq!(report["all_nondegenerate"], true);
    for axis in report["brake_orbits"].as_array().unwrap() {
        assert!(axis["spectrum_error"].as_f64().unwrap() < 1e-6);
        assert_eq!(axis["dp_count"], 0);
        let p = axis["period"].as_f64().unwrap();
        assert!((p - axis["expected_period"].as_f64().unwrap()).abs() < 1e-8);
    }
    for crossing in report["crossings"].as_array().unwrap() {
        let points = crossing["points"].as_array().unwrap();
        assert_eq!(points.len(), 1);
        for c in points[0].as_array().unwrap() {
            assert!(c.as_f64().unwrap().abs() < 1e-9);
        }
    }
    let resonant = &report["resonant"];
    assert_eq!(resonant["dp_count"], 1);
    assert_eq!(resonant["nondegenerate"], false);
    assert!(resonant["trivial_multiplicity"].as_u64().unwrap() >= 4);
    assert!(resonant["family"]["energy_spread"].as_f64().unwrap() < 1e-12);
}

#[test]
fn monodromy_and_intersections() {
    let out = TempDir::new().unwrap();
    assert_eq!(
        run(
            "monodromy",
            &config("oscillator_monodromy.json"),
            out.path()
        ),
        0
    );
    for entry in read_json(&out.path().join("monodromy.json"))
        .as_array()
        .unwrap()
    {
        let det = entry["monodromy"]["determinant"].as_f64().unwrap();
        assert!((det - 1.0).abs() < 1e-6);
        assert_eq!(entry["monodromy"]["nondegenerate"], true);
    }
    assert_eq!(
        run(
            "intersections",
            &config("oscillator_intersections.json"),
            out.path()
        ),
        0
    );
    let rep = read_json(&out.path().join("intersections.json"));
    for entry in rep["self"].as_array().unwrap() {
        assert_eq!(entry["report"]["dp_count"], 0);
        assert_eq!(entry["report"]["reversal_count"], 1);
    }
    let mutual = &rep["mutual"][0]["report"];
    assert_eq!(mutual["dp_count"], 1);
    assert!(mutual["pairs"][0]["point"][0].as_f64().unwrap().abs() < 1e-9);
}

#[test]
fn rotation_on_the_torus() {
    let out = TempDir::new().unwrap();
    assert_eq!(
        run("find-rotation", &config("torus_rotation.json"), out.path()),
        0
    );
    let orbit = read_json(&out.path().join("rotation.json"));
    assert_eq!(orbit["kind"], "rotation");
    assert!(orbit["closure_residual"].as_f64().unwrap() < 1e-8);
    // Translation along x2 gives a family of rotations.
    assert_eq!(orbit["nondegenerate"], false);
}

#[test]
fn jacobi_check_on_both_systems() {
    for name in ["oscillator_jacobi.json", "torus_jacobi.json"] {
        let out = TempDir::new().unwrap();
        assert_eq!(run("jacobi-check", &config(name), out.path()), 0);
        let summary = read_json(&out.path().join("jacobi_check.json"));
        assert_eq!(summary["samples"], 50);
        assert!(summary["max_deviation"].as_f64().unwrap() < 1e-6);
        let table = fs::read_to_string(out.path().join("jacobi_check.csv")).unwrap();
        assert_eq!(table.lines().count(), 51);
    }
}

#[test]
fn perturb_removes_the_crossing() {
    let out = TempDir::new().unwrap();
    assert_eq!(
        run("perturb", &config("perturb_crossing.json"), out.path()),
        0
    );
    let rep = read_json(&out.path().join("perturb.json"));
    assert_eq!(rep["removed"], true);
    assert!(rep["geodesic_residual"].as_f64().unwrap() < 1e-6);
    assert!(rep["identity_residual"].as_f64().unwrap() < 1e-12);
    assert!(rep["removal"]["gap"].as_f64().unwrap() >= 0.025);
    let grid = read_json(&out.path().join("phi_grid.json"));
    assert_eq!(grid["values"].as_array().unwrap().len(), 61);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for (command, name) in [
        ("integrate", "finsler_integrate.json"),
        ("jacobi-check", "oscillator_jacobi.json"),
    ] {
        assert_eq!(run(command, &config(name), a.path()), 0);
        assert_eq!(run(command, &config(name), b.path()), 0);
    }
    for file in [
        "trajectory.csv",
        "integrate.json",
        "jacobi_check.csv",
        "jacobi_check.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

fn assert_failure(dir: &TempDir, command: &str, body: &str, code: i32, kind: &str) {
    let cfg = write_config(dir, body);
    let out = dir.path().join("out");
    assert_eq!(run(command, &cfg, &out), code, "{body}");
    let err = read_json(&out.join("error.json"));
    assert_eq!(err["exit_code"], code);
    assert_eq!(err["kind"], kind);
    assert!(!err["message"].as_str().unwrap().is_empty());
}

const FREE: &str = r#""system": {"dimension": 2, "metric": {"kind": "euclidean"}, "potential": "0", "energy": 0.5}"#;

#[test]
fn configuration_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    assert_failure(&dir, "integrate", "{ not json", 2, "config");
    assert_failure(&dir, "integrate", &format!("{{{FREE}}}"), 2, "config");
    assert_failure(
        &dir,
        "integrate",
        r#"{"system": {"dimension": 2, "metric": {"kind": "euclidean"}, "potential": "x3", "energy": 1},
            "integrate": {"x": [0, 0], "v": [1, 0], "t_end": 1}}"#,
        2,
        "variable_out_of_range",
    );
    assert_failure(
        &dir,
        "integrate",
        r#"{"system": {"dimension": 2, "metric": {"kind": "euclidean"}, "potential": "foo(x1)", "energy": 1},
            "integrate": {"x": [0, 0], "v": [1, 0], "t_end": 1}}"#,
        2,
        "unknown_identifier",
    );
    assert_failure(
        &dir,
        "integrate",
        &format!(r#"{{{FREE}, "integrate": {{"x": [0], "v": [1, 0], "t_end": 1}}}}"#),
        2,
        "config",
    );
    assert_failure(
        &dir,
        "find-brake",
        r#"{"system": {"dimension": 2, "metric": {"kind": "euclidean"}, "potential": "x1^2 + x2^2", "energy": 0},
            "find_brake": {"seeds": [[0, 0]]}}"#,
        2,
        "config",
    );
    assert_failure(
        &dir,
        "integrate",
        &format!(r#"{{{FREE}, "typo": 1}}"#),
        2,
        "config",
    );
}

#[test]
fn numerical_failures_exit_with_3() {
    let dir = TempDir::new().unwrap();
    assert_failure(
        &dir,
        "integrate",
        &format!(
            r#"{{{FREE}, "tolerances": {{"integrator": {{"max_steps": 5}}}},
                "integrate": {{"x": [0, 0], "v": [1, 0], "t_end": 100}}}}"#
        ),
        3,
        "max_steps",
    );
    assert_failure(
        &dir,
        "find-brake",
        r#"{"system": {"dimension": 2, "metric": {"kind": "euclidean"}, "potential": "0.5*(x1^2 + 2*x2^2)", "energy": 0.5},
            "find_brake": {"seeds": [[3, 0]]}}"#,
        3,
        "precondition",
    );
}

#[test]
fn schema_is_published() {
    let output = Command::new(env!("CARGO_BIN_EXE_orbitlab"))
        .arg("schema")
        .output()
        .unwrap();
    assert!(output.status.success());
    let schema: Value = serde_json::from_slice(&output.stdout).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for dir_entry in fs::read_dir(config("")).unwrap() {
        let cfg = read_json(&dir_entry.unwrap().path());
        for key in cfg.as_object().unwrap().keys() {
            assert!(props.contains_key(key), "{key}");
        }
    }
}

#[test]
fn usage_errors_exit_with_2() {
    let usage = Command::new(env!("CARGO_BIN_EXE_orbitlab"))
        .args(["integrate", "--out", "/tmp"])
        .output()
        .unwrap();
    assert_eq!(usage.status.code(), Some(2));
}

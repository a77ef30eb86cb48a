use std::process::{Command, Output};

use serde_json::Value;

fn ebr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

#[test]
fn born_json_has_envelope_and_matching_probabilities() {
    let v = json(&ebr(&["born", "--theta", "1.0471975511965976", "--format", "json"]));
    assert_eq!(v["schema_version"], "ebr/1");
    assert_eq!(v["command"], "born");
    assert!(v["config"].get("workers").is_none());
    let trace = v["result"]["trace"][0].as_f64().unwrap();
    let bary = v["result"]["barycentric"][0].as_f64().unwrap();
    assert!((trace - 0.75).abs() < 1e-12);
    assert!((bary - 0.75).abs() < 1e-12);
    assert_eq!(v["result"]["pass"], true);
    // Key order is part of the format.
    let text = String::from_utf8(ebr(&["born", "--theta", "0", "--format", "json"]).stdout).unwrap();
    assert!(text.trim_start().starts_with("{\n  \"schema_version\""));
}

#[test]
fn measure_single_run_includes_record() {
    let v = json(&ebr(&["measure", "--dim", "3", "--runs", "1", "--seed", "4", "--format", "json"]));
    let record = &v["result"]["record"];
    let k = record["outcome_index"].as_u64().unwrap() as usize;
    assert_eq!(v["result"]["stats"]["counts"][k], 1);
    assert_eq!(record["final_state"].as_array().unwrap().len(), 3);
    assert_eq!(record["final_state"][k][k], serde_json::json!([1.0, 0.0]));
    assert_eq!(record["rng"]["run_index"], 0);
}

#[test]
fn measure_many_runs_passes_and_omits_record() {
    let v = json(&ebr(&[
        "measure", "--dim", "4", "--observable", "spin-x", "--runs", "50000", "--seed", "8",
        "--sampler", "fast", "--format", "json",
    ]));
    assert_eq!(v["result"]["pass"], true);
    assert!(v["result"]["record"].is_null());
    assert_eq!(v["result"]["stats"]["n_runs"], 50000);
}

#[test]
fn seeds_and_workers() {
    let a = ebr(&["measure", "--runs", "5000", "--seed", "1", "--format", "json", "--workers", "1"]);
    let b = ebr(&["measure", "--runs", "5000", "--seed", "1", "--format", "json", "--workers", "3"]);
    let c = ebr(&["measure", "--runs", "5000", "--seed", "2", "--format", "json"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn validation_errors_exit_with_two() {
    for args in [
        &["born", "--dim", "1"][..],
        &["born", "--theta", "4"],
        &["born", "--dim", "3", "--observable", "diag:1,1,0"],
        &["born", "--state", "nonsense"],
        &["measure", "--runs", "0"],
        &["measure", "--sampler", "fast", "--density", "random-grid:3"],
        &["born", "--dim", "3", "--state", "bloch:0,0,0,0,0,0,0,1"],
        &["born", "--theta", "1", "--state", "random-pure"],
    ] {
        let out = ebr(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("invalid"), "{args:?}");
    }
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(
        &cfg,
        r#"{"dim": 3, "state": {"bloch": [0,0,0,0,0,0,0,0]}, "observable": {"matrix":
            [[[2,0],[0,0],[0,0]],[[0,0],[1,0],[0,0]],[[0,0],[0,0],[-1,0]]]}}"#,
    )
    .unwrap();
    let path = cfg.to_str().unwrap();
    let v = json(&ebr(&["born", "--config", path, "--format", "json"]));
    for p in v["result"]["trace"].as_array().unwrap() {
        assert!((p.as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(v["result"]["eigenvalues"], serde_json::json!([2.0, 1.0, -1.0]));

    let v = json(&ebr(&["born", "--config", path, "--state", "basis:2", "--format", "json"]));
    assert!((v["result"]["trace"][2].as_f64().unwrap() - 1.0).abs() < 1e-12);

    std::fs::write(&cfg, r#"{"dimension": 3}"#).unwrap();
    assert_eq!(ebr(&["born", "--config", path]).status.code(), Some(2));
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("born.json");
    let res = ebr(&["born", "--theta", "0.5", "--format", "json", "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    assert!(res.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["command"], "born");
}

#[test]
fn trajectory_emits_header_then_frames() {
    let out = ebr(&["trajectory", "--dim", "3", "--frames", "4", "--seed", "6"]);
    assert!(out.status.success());
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[0]["schema_version"], "ebr/1");
    assert_eq!(lines[0]["frames"], 8);
    let stages: Vec<&str> = lines[1..].iter().map(|f| f["stage"].as_str().unwrap()).collect();
    assert_eq!(
        stages,
        ["plunge", "plunge", "plunge", "plunge", "disintegration", "collapse", "collapse", "collapse"]
    );
    assert!(lines[1]["break_point"].is_null());
    assert_eq!(lines[5]["break_point"].as_array().unwrap().len(), 3);
    assert!(lines[8]["break_point"].is_null());
    let outcome = lines[0]["outcome"].clone();
    assert!(lines[1..].iter().all(|f| f["outcome"] == outcome));
    for f in &lines[1..] {
        assert_eq!(f["embedding"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn universal_average_table_converges() {
    let out = ebr(&[
        "universal-average", "--theta", "1.0471975511965976", "--densities", "50,500", "--depth", "4",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("densities"));
    assert!(text.contains("PASS"));
}

#[test]
fn sphere_info_reports_status_and_scan() {
    let v = json(&ebr(&["sphere-info", "--dim", "3", "--bloch", "0,0,0,0,0,0,0,1", "--format", "json"]));
    assert_eq!(v["result"]["bona_fide"], false);
    assert!((v["result"]["min_eigenvalue"].as_f64().unwrap() + 1.0 / 3.0).abs() < 1e-12);

    let v = json(&ebr(&["sphere-info", "--dim", "2", "--bloch", "0,0,0", "--format", "json"]));
    assert_eq!(v["result"]["bona_fide"], true);
    assert!((v["result"]["min_eigenvalue"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    let v = json(&ebr(&["sphere-info", "--dim", "2", "--bloch", "0.6,0,-0.8", "--scan", "2000", "--format", "json"]));
    assert_eq!(v["result"]["scan"]["bona_fide"], 2000);
    assert!((v["result"]["norm"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

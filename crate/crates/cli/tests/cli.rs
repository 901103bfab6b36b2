//! End-to-end checks of the `eqprice` binary: exit codes, determinism, and
//! artifact round-trips.

use std::path::Path;
use std::process::{Command, Output};

fn eqprice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqprice"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(&body).unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn small_market(scheme: &str, time_steps: u64) -> serde_json::Value {
    serde_json::json!({
        "schema": 1,
        "market": {
            "agents": [
                { "family": "constant", "drift": [0.0], "sigma": [[0.1]] },
                { "family": "constant", "drift": [0.0], "sigma": [[0.3]] }
            ],
            "payoff": { "kind": "call", "strike": 1.0 },
            "horizon": 1.0,
            "x0": [1.0],
            "supply": 1.0,
            "short_bound": 0.0
        },
        "grid": { "nodes": [101], "time_steps": time_steps },
        "sim": { "paths": 500, "steps": 50, "seed": 9, "measure": "feedback" },
        "scheme": scheme
    })
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, b"{ not json").unwrap();
    let out = eqprice(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    // Unknown fields are config errors too.
    let mut cfg = small_market("implicit", 100);
    cfg["grid"]["nodse"] = serde_json::json!([101]);
    let path = write_config(dir.path(), "typo.json", cfg);
    let out = eqprice(&["validate", "--config", &path]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn degenerate_model_fails_validation_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_market("implicit", 100);
    cfg["market"]["agents"][0]["sigma"] = serde_json::json!([[0.0]]);
    let path = write_config(dir.path(), "degenerate.json", cfg);
    let out = eqprice(&["validate", "--config", &path]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["pass"], serde_json::json!(false));
}

#[test]
fn cfl_violation_exits_3_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    // 101 nodes with only 10 explicit time steps violates the CFL bound.
    let path = write_config(dir.path(), "cfl.json", small_market("explicit", 10));
    let out_dir = dir.path().join("out");
    let out = eqprice(&[
        "price",
        "--config",
        &path,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.contains("time steps") || stderr.contains("CFL"),
        "stderr should explain the CFL failure: {stderr}"
    );
}

#[test]
fn price_and_simulate_are_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "cfg.json", small_market("implicit", 100));
    let mut artifacts = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("run{run}"));
        let out_str = out_dir.to_str().unwrap().to_owned();
        let out = eqprice(&["price", "--config", &path, "--out", &out_str]);
        assert_eq!(out.status.code(), Some(0), "{out:?}");
        let out = eqprice(&[
            "simulate",
            "--config",
            &path,
            "--out",
            &out_str,
            "--seed",
            "777",
        ]);
        assert_eq!(out.status.code(), Some(0), "{out:?}");
        let files = ["report.json", "surface.csv", "surface.bin", "strategies.csv", "paths.csv"];
        artifacts.push(
            files
                .map(|f| std::fs::read(out_dir.join(f)).unwrap())
                .to_vec(),
        );
    }
    assert_eq!(artifacts[0], artifacts[1], "same seed must reproduce bytes");
}

#[test]
fn verify_passes_on_well_posed_market() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_market("implicit", 200);
    cfg["grid"]["nodes"] = serde_json::json!([201]);
    cfg["sim"] = serde_json::json!({ "paths": 4000, "steps": 100, "seed": 3, "measure": "feedback" });
    cfg["verify"] = serde_json::json!({
        "lattice_steps": 8,
        "lattice_increment": 0.0,
        "competitors": 10,
        "residual_multiplier": 10.0
    });
    let path = write_config(dir.path(), "cfg.json", cfg);
    let out_dir = dir.path().join("out");
    let out = eqprice(&[
        "verify",
        "--config",
        &path,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::json!(true), "{report}");
}

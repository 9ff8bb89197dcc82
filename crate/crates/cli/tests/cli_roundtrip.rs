//! End-to-end runs of the `sro` binary: every subcommand, artifact schema
//! versions, and the report verification loop.

use std::path::Path;
use std::process::Command;

fn sro(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sro"))
        .args(args)
        .output()
        .expect("binary should launch")
}

fn assert_ok(out: &std::process::Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TINY_CONFIG: &str = r#"{
  "mode": "controlled",
  "lookback": 3,
  "path_length": 160,
  "train_rows": 140,
  "validation_rows": 10,
  "test_rows": 10,
  "retrain_window": 100,
  "assets": 2,
  "seeds": [40],
  "rho_grid": [0.1],
  "robust": {"iterations": 150, "batch": 40, "inner_iterations": 60, "trace_stride": 150},
  "n_oracle": 1000,
  "omega_grid_size": 4,
  "screen_samples": 400
}"#;

#[test]
fn full_command_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let config = dir.path().join("config.json");
    std::fs::write(&config, TINY_CONFIG).unwrap();
    let config = config.to_str().unwrap().to_string();
    let panel = dir.path().join("panel.csv");
    let panel_arg = panel.to_str().unwrap().to_string();

    assert_ok(
        &sro(&["synth", "--assets", "2", "--rows", "220", "--seed", "5", "--out", &out]),
        "synth",
    );
    assert!(panel.exists());

    assert_ok(
        &sro(&["calibrate", "--data", &panel_arg, "--lookback", "3", "--out", &out]),
        "calibrate",
    );
    let generator = read_json(&dir.path().join("generator.json"));
    assert_eq!(generator["schema_version"], 1);
    assert_eq!(generator["lookback"], 3);
    assert_eq!(generator["generator"]["kind"]["type"], "affine_gaussian");

    let gen_arg = dir.path().join("generator.json").to_str().unwrap().to_string();
    assert_ok(
        &sro(&[
            "solve", "--data", &panel_arg, "--generator", &gen_arg, "--config", &config,
            "--rho", "0.1", "--seed", "9", "--solver", "two-timescale", "--out", &out,
        ]),
        "solve",
    );
    let weights = read_json(&dir.path().join("weights.json"));
    assert_eq!(weights["schema_version"], 1);
    assert_eq!(weights["rho"], 0.1);
    assert_eq!(weights["solver"], "two-timescale");
    let w: Vec<f64> =
        weights["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(w.len(), 2);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9, "weights must lie on the simplex");
    assert!(w.iter().all(|v| *v >= -1e-12));

    let study_dir = dir.path().join("study");
    let study_arg = study_dir.to_str().unwrap().to_string();
    assert_ok(
        &sro(&["controlled", "--config", &config, "--data", &panel_arg, "--out", &study_arg]),
        "controlled",
    );
    for artifact in
        ["daily_returns.csv", "per_seed_metrics.csv", "aggregate.csv", "certificates.json"]
    {
        assert!(study_dir.join(artifact).exists(), "missing {artifact}");
    }
    let certs = read_json(&study_dir.join("certificates.json"));
    assert_eq!(certs["schema_version"], 1);

    let report = sro(&["report", "--out", &study_arg]);
    assert_ok(&report, "report");
    assert!(String::from_utf8_lossy(&report.stdout).contains("aggregates verified"));

    // Tampering with an aggregate must make `report` fail.
    let agg_path = study_dir.join("aggregate.csv");
    let tampered = std::fs::read_to_string(&agg_path).unwrap().replace("nominal", "nominal2");
    std::fs::write(&agg_path, tampered).unwrap();
    let bad = sro(&["report", "--out", &study_arg]);
    assert!(!bad.status.success(), "report must fail on a tampered aggregate file");

    assert_ok(
        &sro(&["certify", "--config", &config, "--data", &panel_arg, "--out", &out]),
        "certify",
    );
    let sweep = std::fs::read_to_string(dir.path().join("certificate_sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(lines.next(), Some("rho,mu_bar,epsilon_n,regime"));
    assert_eq!(lines.count(), 1, "one row per budget in the grid");
}

#[test]
fn backtest_requires_data() {
    let out = sro(&["backtest"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
}

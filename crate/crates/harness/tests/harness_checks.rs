//! End-to-end harness invariants: byte-stable artifacts, no lookahead in the
//! decision pipeline, and exact panel round trips.

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sro_core::solver::RobustConfig;
use sro_harness::experiment::{decide, fit_window, ExperimentConfig, SolverChoice};
use sro_harness::panel::{emit_csv, ingest_csv, ReturnPanel};
use sro_harness::preprocess::{make_context, preprocess};
use sro_harness::report::write_study;
use sro_harness::synth::{synth_panel, trading_dates, SynthConfig};
use sro_harness::{run_backtest, run_controlled};

fn tiny_controlled() -> ExperimentConfig {
    let mut robust = RobustConfig::baseline();
    robust.iterations = 150;
    robust.batch = 40;
    robust.inner_iterations = 60;
    robust.trace_stride = 150;
    ExperimentConfig {
        lookback: 3,
        path_length: 160,
        train_rows: 140,
        validation_rows: 10,
        test_rows: 10,
        retrain_window: 140,
        seeds: vec![40, 41],
        rho_grid: vec![0.1],
        robust,
        n_oracle: 1000,
        omega_grid_size: 4,
        screen_samples: 400,
        ..ExperimentConfig::default()
    }
}

fn read_artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|name| {
            let bytes = fs::read(dir.join(&name)).unwrap();
            (name, bytes)
        })
        .collect()
}

#[test]
fn controlled_artifacts_are_byte_identical_across_runs() {
    let cfg = tiny_controlled();
    let panel = synth_panel(SynthConfig { assets: 2, rows: 220, seed: 5 });

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    write_study(dir_a.path(), &run_controlled(&cfg, &panel).unwrap()).unwrap();
    write_study(dir_b.path(), &run_controlled(&cfg, &panel).unwrap()).unwrap();

    let a = read_artifacts(dir_a.path());
    let b = read_artifacts(dir_b.path());
    assert_eq!(
        a.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        vec!["aggregate.csv", "certificates.json", "daily_returns.csv", "per_seed_metrics.csv"],
    );
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between identical runs");
    }
}

#[test]
fn backtest_artifacts_are_byte_identical_across_runs() {
    let mut cfg = tiny_controlled();
    cfg.mode = sro_harness::Mode::Backtest;
    cfg.assets = 3;
    cfg.solver = SolverChoice::FirstOrder;
    let panel = synth_panel(SynthConfig { assets: 6, rows: 170, seed: 21 });

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    write_study(dir_a.path(), &run_backtest(&cfg, &panel).unwrap()).unwrap();
    write_study(dir_b.path(), &run_backtest(&cfg, &panel).unwrap()).unwrap();
    for ((name_a, bytes_a), (_, bytes_b)) in
        read_artifacts(dir_a.path()).iter().zip(&read_artifacts(dir_b.path()))
    {
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between identical runs");
    }
}

/// Runs the full decision pipeline (preprocess, fit, context, solve) at day
/// `t` of a panel and returns the robust weights.
fn pipeline_decision(panel: &ReturnPanel, t: usize) -> Vec<f64> {
    let lookback = 4;
    let (clipped, stats) = preprocess(panel).unwrap();
    let nominal = fit_window(&clipped, &stats, 0, 150, lookback).unwrap().spec;
    let x = make_context(&clipped, &stats, t, lookback).unwrap();
    let problem = sro_core::loss::DecisionProblem::with_default_lambda(panel.assets()).unwrap();
    let mut cfg = RobustConfig::baseline();
    cfg.iterations = 120;
    cfg.batch = 30;
    cfg.trace_stride = 120;
    cfg.seed = 77;
    decide(&nominal, &x, &problem, &cfg, SolverChoice::TwoTimescale, 0.2).unwrap()
}

#[test]
fn decisions_never_depend_on_future_rows() {
    let panel = synth_panel(SynthConfig { assets: 2, rows: 200, seed: 13 });
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Three random decision times after the training window.
    for _ in 0..3 {
        let t = rng.gen_range(150..199);
        let baseline = pipeline_decision(&panel, t);

        // Trash every row strictly after the decision time.
        let mut perturbed = panel.clone();
        let d = perturbed.assets();
        for row in (t + 1)..perturbed.rows() {
            for j in 0..d {
                perturbed.returns[row * d + j] = if (row + j) % 2 == 0 { 0.09 } else { -0.07 };
            }
        }
        assert_ne!(panel.returns, perturbed.returns);

        let decision = pipeline_decision(&perturbed, t);
        assert_eq!(baseline.len(), decision.len());
        for (a, b) in baseline.iter().zip(&decision) {
            assert_eq!(a.to_bits(), b.to_bits(), "decision at t={t} saw the future");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn panel_round_trip_is_bitwise(
        rows in 1usize..12,
        assets in 1usize..5,
        seed in any::<u64>(),
    ) {
        // Random finite returns in a plausible range, including exact zeros.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let returns: Vec<f64> = (0..rows * assets)
            .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(-0.3..0.3) })
            .collect();
        let tickers = (0..assets).map(|j| format!("T{j}")).collect();
        let panel = ReturnPanel::new(trading_dates(rows), tickers, returns).unwrap();

        let mut buffer = Vec::new();
        emit_csv(&panel, &mut buffer).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        fs::write(file.path(), &buffer).unwrap();
        let back = ingest_csv(file.path()).unwrap();

        prop_assert_eq!(&panel.dates, &back.dates);
        prop_assert_eq!(&panel.tickers, &back.tickers);
        for (a, b) in panel.returns.iter().zip(&back.returns) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

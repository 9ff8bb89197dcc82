//! Controlled studies: a known oracle sampler generates the market, so the
//! generalization gap of every decision is measurable.
//!
//! Per seed: the oracle (calibrated once on the historical panel) simulates
//! a synthetic future path; a nominal generator is refitted on a recent
//! window of that path, screened, tuned over the perturbation-budget grid on
//! validation days, and then nominal, robust, and oracle decisions are run
//! side by side over the test days with daily oracle-utility diagnostics.

use std::collections::VecDeque;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sro_core::certificate::{
    certificate_constants, classify_regime, coverage_check, gaps, omega_grid, oracle_utility,
    slack_estimate, CertificateReport, CERTIFICATE_SCHEMA_VERSION,
};
use sro_core::generator::GeneratorSpec;
use sro_core::geometry::PerturbationBall;
use sro_core::loss::DecisionProblem;
use sro_core::solver::{robust_objective, RobustConfig};

use crate::experiment::{
    batch_utility, decide, decide_nominal, derive_seed, fit_window, select_rho, ExperimentConfig,
    ExperimentError, Mode,
};
use crate::panel::ReturnPanel;
use crate::preprocess::{make_context, preprocess, Standardization, CLIP};
use crate::report::{Method, MethodSeries, SeedRun, StudyResult};
use crate::screen::validity_screen;
use crate::synth::trading_dates_from;

/// Confidence level of the finite-sample certificate constants.
pub const CERT_DELTA: f64 = 0.05;

/// Rolls the oracle forward autoregressively: each step standardizes the
/// trailing `lookback` rows with the oracle's own statistics, draws a fresh
/// latent, and appends the generated return row to the window. The returned
/// panel holds raw (unclipped) returns and continues the history's dates.
pub fn simulate_path(
    oracle: &GeneratorSpec<f64>,
    history: &ReturnPanel,
    stats: &Standardization,
    lookback: usize,
    rows: usize,
    seed: u64,
) -> Result<ReturnPanel, ExperimentError> {
    let d = history.assets();
    if history.rows() < lookback {
        return Err(ExperimentError::Config(format!(
            "history has {} rows, lookback {lookback} needs at least that many",
            history.rows()
        )));
    }
    if rows == 0 {
        return Err(ExperimentError::Config("cannot simulate an empty path".into()));
    }
    let mut window: VecDeque<Vec<f64>> = (history.rows() - lookback..history.rows())
        .map(|t| history.row(t).to_vec())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; oracle.dims.latent];
    let mut y = vec![0.0; d];
    let mut ws = oracle.workspace();
    let mut x = vec![0.0; lookback * d];
    let mut returns = Vec::with_capacity(rows * d);
    for _ in 0..rows {
        let mut k = 0;
        for row in &window {
            for j in 0..d {
                x[k] = (row[j] - stats.mean[j]) / stats.std[j];
                k += 1;
            }
        }
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        oracle.forward_into(&z, &x, &mut ws, &mut y);
        returns.extend_from_slice(&y);
        window.pop_front();
        window.push_back(y.clone());
    }
    let next_day = history
        .dates
        .last()
        .expect("non-empty history")
        .succ_opt()
        .expect("date range");
    Ok(ReturnPanel::new(trading_dates_from(next_day, rows), history.tickers.clone(), returns)?)
}

pub fn run_controlled(
    cfg: &ExperimentConfig,
    panel: &ReturnPanel,
) -> Result<StudyResult, ExperimentError> {
    cfg.validate()?;
    if cfg.mode != Mode::Controlled {
        return Err(ExperimentError::Config("run_controlled requires mode = controlled".into()));
    }
    panel.validate_for(cfg.lookback)?;
    let problem = DecisionProblem::new(panel.assets(), cfg.lambda)?;

    // The oracle sampler: one calibration on the full historical panel.
    let (hist_clipped, hist_stats) = preprocess(panel)?;
    let oracle = fit_window(&hist_clipped, &hist_stats, 0, hist_clipped.rows(), cfg.lookback)?.spec;

    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        runs.push(run_seed(cfg, &problem, &oracle, &hist_clipped, &hist_stats, seed)?);
    }
    Ok(StudyResult { runs })
}

fn run_seed(
    cfg: &ExperimentConfig,
    problem: &DecisionProblem<f64>,
    oracle: &GeneratorSpec<f64>,
    hist_clipped: &ReturnPanel,
    hist_stats: &Standardization,
    seed: u64,
) -> Result<SeedRun, ExperimentError> {
    let splits = cfg.splits();
    let path = simulate_path(
        oracle,
        hist_clipped,
        hist_stats,
        cfg.lookback,
        cfg.path_length,
        derive_seed(seed, "path"),
    )?;

    // Nominal pipeline: the path is preprocessed on its own terms, so the
    // nominal model never sees the oracle's statistics.
    let (path_clipped, path_stats) = preprocess(&path)?;
    let retrain_start = splits.train.end - cfg.retrain_window;
    let nominal =
        fit_window(&path_clipped, &path_stats, retrain_start, splits.train.end, cfg.lookback)?
            .spec;

    let screen = validity_screen(
        &nominal,
        &path_clipped,
        &path_stats,
        retrain_start,
        splits.train.end,
        cfg.lookback,
        cfg.screen_samples,
        derive_seed(seed, "screen"),
    )?;
    if !screen.pass {
        return Ok(SeedRun {
            seed,
            excluded: Some(screen.failures.join("; ")),
            rho: None,
            days: Vec::new(),
            series: Vec::new(),
            screen,
            certificate: None,
        });
    }

    let rho = select_rho(
        cfg,
        problem,
        &nominal,
        &path,
        &path_clipped,
        &path_stats,
        splits.validation.clone(),
        seed,
    )?;

    let mut days = Vec::with_capacity(splits.test.len());
    let mut returns: [Vec<f64>; 3] = Default::default();
    let mut gap_series: [Vec<f64>; 3] = Default::default();
    let mut certificate = None;
    for t in splits.test.clone() {
        days.push(t);
        let x_nom = make_context(&path_clipped, &path_stats, t, cfg.lookback)?;
        // The oracle sees the same market window in its own standardization,
        // exactly as during path generation.
        let x_orc = make_context(&path, hist_stats, t, cfg.lookback)?;

        let solve_cfg =
            RobustConfig { seed: derive_seed(seed, &format!("solve-{t}")), ..cfg.robust.clone() };
        let w_nom = decide_nominal(&nominal, &x_nom, problem, &solve_cfg)?;
        let w_rob = decide(&nominal, &x_nom, problem, &solve_cfg, cfg.solver, rho)?;
        let w_orc = decide_nominal(oracle, &x_orc, problem, &solve_cfg)?;

        let raw = path.row(t);
        for (series, w) in returns.iter_mut().zip([&w_nom, &w_rob, &w_orc]) {
            series.push(crate::preprocess::realized_return(w, raw)?);
        }

        // Daily diagnostics: in-model values vs fresh oracle Monte Carlo.
        let emp_nom = batch_utility(&nominal, &x_nom, problem, &w_nom, solve_cfg.seed, solve_cfg.batch)?;
        let rob_cfg = RobustConfig { rho, ..solve_cfg.clone() };
        let rob_val = robust_objective(&nominal, &x_nom, problem, &w_rob, &rob_cfg)?;
        let emp_orc = batch_utility(oracle, &x_orc, problem, &w_orc, solve_cfg.seed, solve_cfg.batch)?;
        let j_nom = oracle_utility(
            oracle,
            &x_orc,
            problem,
            &w_nom,
            cfg.n_oracle,
            derive_seed(seed, &format!("mc-nominal-{t}")),
        )?;
        let j_rob = oracle_utility(
            oracle,
            &x_orc,
            problem,
            &w_rob,
            cfg.n_oracle,
            derive_seed(seed, &format!("mc-sro-{t}")),
        )?;
        let j_orc = oracle_utility(
            oracle,
            &x_orc,
            problem,
            &w_orc,
            cfg.n_oracle,
            derive_seed(seed, &format!("mc-oracle-{t}")),
        )?;
        let gap = gaps(emp_nom, j_nom.value, rob_val, j_rob.value);
        gap_series[0].push(gap.gap_nominal);
        gap_series[1].push(gap.gap_robust);
        gap_series[2].push(emp_orc - j_orc.value);

        if certificate.is_none() {
            certificate = Some(build_certificate(
                cfg,
                problem,
                oracle,
                &nominal,
                &x_orc,
                &x_nom,
                rho,
                seed,
                (emp_nom, rob_val, j_nom.value, j_rob.value),
                (&w_nom, &w_rob),
            )?);
        }
    }

    let series = [Method::Nominal, Method::Sro, Method::Oracle]
        .into_iter()
        .zip(returns)
        .zip(gap_series)
        .map(|((method, returns), gaps)| MethodSeries { method, returns, gaps })
        .collect();
    Ok(SeedRun { seed, excluded: None, rho: Some(rho), days, series, screen, certificate })
}

#[allow(clippy::too_many_arguments)]
fn build_certificate(
    cfg: &ExperimentConfig,
    problem: &DecisionProblem<f64>,
    oracle: &GeneratorSpec<f64>,
    nominal: &GeneratorSpec<f64>,
    x_orc: &[f64],
    x_nom: &[f64],
    rho: f64,
    seed: u64,
    values: (f64, f64, f64, f64),
    decisions: (&[f64], &[f64]),
) -> Result<CertificateReport<f64>, ExperimentError> {
    let (emp_nom, rob_val, j_nom, j_rob) = values;
    let grid = omega_grid(
        problem.n_assets,
        cfg.omega_grid_size,
        derive_seed(seed, "omega-grid"),
        &[decisions.0.to_vec(), decisions.1.to_vec()],
    )?;
    let cert_cfg =
        RobustConfig { rho, seed: derive_seed(seed, "cert-solve"), ..cfg.robust.clone() };
    let slack = slack_estimate(
        oracle,
        nominal,
        x_orc,
        x_nom,
        problem,
        &cert_cfg,
        &grid,
        cfg.n_oracle,
        derive_seed(seed, "slack-mc"),
    )?;
    let ball = PerturbationBall::new(nominal.theta.clone(), rho, cfg.robust.exponent)?;
    let constants =
        certificate_constants(nominal, problem, CLIP, &ball, None, CERT_DELTA, cfg.robust.batch)?;
    let coverage = coverage_check(oracle, nominal, &ball)?;
    Ok(CertificateReport {
        schema_version: CERTIFICATE_SCHEMA_VERSION,
        empirical_utility_nominal: emp_nom,
        robust_objective: rob_val,
        oracle_utility_nominal: j_nom,
        oracle_utility_robust: j_rob,
        gap_nominal: emp_nom - j_nom,
        gap_robust: rob_val - j_rob,
        slack_mu_bar: slack.mu_bar,
        epsilon_n: constants.epsilon_n,
        regime: classify_regime(slack.mu_bar, constants.epsilon_n),
        coverage: coverage.covered,
        coverage_distance: coverage.distance,
        oracle_samples: cfg.n_oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::SolverChoice;
    use crate::synth::{synth_panel, SynthConfig};

    fn tiny_config() -> ExperimentConfig {
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
            solver: SolverChoice::TwoTimescale,
            robust,
            n_oracle: 1000,
            omega_grid_size: 4,
            screen_samples: 400,
            ..ExperimentConfig::default()
        }
    }

    fn history() -> ReturnPanel {
        synth_panel(SynthConfig { assets: 2, rows: 220, seed: 5 })
    }

    #[test]
    fn study_produces_three_series_and_certificates() {
        let cfg = tiny_config();
        let study = run_controlled(&cfg, &history()).unwrap();
        assert_eq!(study.runs.len(), 2);
        for run in &study.runs {
            assert!(run.is_included(), "excluded: {:?}", run.excluded);
            assert_eq!(run.rho, Some(0.1));
            assert_eq!(run.days, (150..160).collect::<Vec<_>>());
            assert_eq!(run.series.len(), 3);
            for series in &run.series {
                assert_eq!(series.returns.len(), 10);
                assert_eq!(series.gaps.len(), 10);
                assert!(series.returns.iter().all(|r| r.is_finite()));
            }
            let cert = run.certificate.as_ref().unwrap();
            assert!(cert.consistent());
            assert!(cert.epsilon_n > 0.0);
        }
    }

    #[test]
    fn study_is_deterministic() {
        let cfg = tiny_config();
        let a = run_controlled(&cfg, &history()).unwrap();
        let b = run_controlled(&cfg, &history()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_decouple_paths() {
        let cfg = tiny_config();
        let study = run_controlled(&cfg, &history()).unwrap();
        let a = &study.runs[0].series[0].returns;
        let b = &study.runs[1].series[0].returns;
        assert_ne!(a, b, "different seeds must see different synthetic paths");
    }

    #[test]
    fn simulated_path_is_seeded_and_sized() {
        let panel = history();
        let (clipped, stats) = preprocess(&panel).unwrap();
        let oracle = fit_window(&clipped, &stats, 0, clipped.rows(), 3).unwrap().spec;
        let a = simulate_path(&oracle, &clipped, &stats, 3, 120, 9).unwrap();
        let b = simulate_path(&oracle, &clipped, &stats, 3, 120, 9).unwrap();
        let c = simulate_path(&oracle, &clipped, &stats, 3, 120, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.returns, c.returns);
        assert_eq!(a.rows(), 120);
        assert_eq!(a.assets(), 2);
        assert!(a.dates[0] > *clipped.dates.last().unwrap());
        // Autoregressive continuation must not blow up.
        assert!(a.returns.iter().all(|r| r.is_finite() && r.abs() < 1.0));
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let cfg = ExperimentConfig { mode: Mode::Backtest, ..tiny_config() };
        assert!(matches!(
            run_controlled(&cfg, &history()),
            Err(ExperimentError::Config(_))
        ));
    }
}

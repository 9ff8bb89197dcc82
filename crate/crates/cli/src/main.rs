//! `sro` — sampler-robust portfolio optimization toolkit.
//!
//! Subcommands: `calibrate` a scenario generator from a return panel,
//! `solve` for robust weights at the latest decision time, `certify` a
//! perturbation-budget sweep, run `controlled` studies or real-data
//! `backtest`s, re-`report` an existing study directory, and `synth` a
//! demo panel. Every artifact is deterministic in the config and seeds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sro_core::certificate::{rho_sweep, write_sweep_csv};
use sro_core::generator::GeneratorSpec;
use sro_core::loss::DecisionProblem;
use sro_core::solver::{robust_objective, RobustConfig};
use sro_harness::controlled::{simulate_path, CERT_DELTA};
use sro_harness::experiment::{
    decide, derive_seed, fit_window, ExperimentConfig, Mode, SolverChoice,
};
use sro_harness::panel::{emit_csv, ingest_csv, ReturnPanel};
use sro_harness::preprocess::{make_context, preprocess, Standardization, CLIP, STATS_WINDOW};
use sro_harness::report::{verify_aggregates, write_study, AggregateRow, StudyResult};
use sro_harness::screen::validity_screen;
use sro_harness::synth::{synth_panel, SynthConfig};
use sro_harness::{run_backtest, run_controlled};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "sro", version, about = "Sampler-robust portfolio optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the affine scenario generator on a return panel.
    Calibrate(CalibrateArgs),
    /// Solve for portfolio weights at the panel's latest decision time.
    Solve(SolveArgs),
    /// Sweep the perturbation budget and write slack/regime rows.
    Certify(CertifyArgs),
    /// Controlled study against a known oracle sampler.
    Controlled(StudyArgs),
    /// Real-data backtest (nominal vs robust, no oracle).
    Backtest(StudyArgs),
    /// Verify and print the aggregates of an existing study directory.
    Report(ReportArgs),
    /// Generate a synthetic return panel.
    Synth(SynthArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Return panel CSV (`date,<ticker>,...`).
    #[arg(long)]
    data: PathBuf,
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's context lookback.
    #[arg(long)]
    lookback: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "sro-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Return panel CSV.
    #[arg(long)]
    data: PathBuf,
    /// Calibrated generator JSON (from `calibrate`); fitted on the fly when
    /// omitted.
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Perturbation budget (defaults to the config's solver budget).
    #[arg(long)]
    rho: Option<f64>,
    /// Latent batch seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Robust solver: first-order or two-timescale.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long, default_value = "sro-out")]
    out: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    /// Historical panel the oracle sampler is calibrated on.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Study seed to certify (defaults to the config's first seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "sro-out")]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Return panel CSV; controlled studies fall back to a synthetic panel,
    /// backtests require one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Pin the perturbation budget instead of validating over the grid.
    #[arg(long)]
    rho: Option<f64>,
    /// Robust solver: first-order or two-timescale.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long, default_value = "sro-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Study directory holding per_seed_metrics.csv and aggregate.csv.
    #[arg(long, default_value = "sro-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    assets: usize,
    #[arg(long, default_value_t = 1300)]
    rows: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "sro-out")]
    out: PathBuf,
}

/// Calibrated-generator artifact: the fitted spec plus everything needed to
/// rebuild decision contexts (lookback, standardization, ticker order).
#[derive(Serialize, Deserialize)]
struct GeneratorFile {
    schema_version: u32,
    lookback: usize,
    tickers: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
    rows: usize,
    ridge_used: bool,
    generator: GeneratorSpec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    schema_version: u32,
    solver: String,
    rho: f64,
    seed: u64,
    /// Empirical robust criterion of the weights at the calibrated
    /// generator (the plain batch utility when `rho` is zero).
    objective: f64,
    tickers: Vec<String>,
    weights: Vec<f64>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Controlled(args) => cmd_study(args, Mode::Controlled),
        Command::Backtest(args) => cmd_study(args, Mode::Backtest),
        Command::Report(args) => cmd_report(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_panel(path: &Path) -> Result<ReturnPanel> {
    ingest_csv(path).with_context(|| format!("reading panel {}", path.display()))
}

fn parse_solver(text: &Option<String>, fallback: SolverChoice) -> Result<SolverChoice> {
    match text {
        Some(text) => text.parse().map_err(|message: String| anyhow::anyhow!(message)),
        None => Ok(fallback),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(lookback) = args.lookback {
        cfg.lookback = lookback;
    }
    let panel = load_panel(&args.data)?;
    let (clipped, stats) = preprocess(&panel)?;
    let fit = fit_window(&clipped, &stats, 0, clipped.rows(), cfg.lookback)?;

    fs::create_dir_all(&args.out)?;
    let path = args.out.join("generator.json");
    write_json(
        &path,
        &GeneratorFile {
            schema_version: SCHEMA_VERSION,
            lookback: cfg.lookback,
            tickers: panel.tickers.clone(),
            mean: stats.mean,
            std: stats.std,
            rows: fit.meta.rows,
            ridge_used: fit.meta.ridge_used,
            generator: fit.spec,
        },
    )?;
    println!(
        "calibrated affine generator on {} pairs ({} assets, lookback {}){} -> {}",
        fit.meta.rows,
        panel.assets(),
        cfg.lookback,
        if fit.meta.ridge_used { " [ridge fallback]" } else { "" },
        path.display()
    );
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let panel = load_panel(&args.data)?;
    let solver = parse_solver(&args.solver, cfg.solver)?;
    let rho = args.rho.unwrap_or(cfg.robust.rho);
    if !(rho >= 0.0) || !rho.is_finite() {
        bail!("--rho must be finite and non-negative, got {rho}");
    }

    // Either reuse a calibrated artifact (with its own standardization) or
    // fit on the panel in place.
    let (generator, lookback, stats) = match &args.generator {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading generator {}", path.display()))?;
            let file: GeneratorFile = serde_json::from_str(&text)
                .with_context(|| format!("parsing generator {}", path.display()))?;
            if file.schema_version != SCHEMA_VERSION {
                bail!("generator schema version {} is unsupported", file.schema_version);
            }
            if file.tickers != panel.tickers {
                bail!(
                    "generator was calibrated on tickers {:?}, panel has {:?}",
                    file.tickers,
                    panel.tickers
                );
            }
            (file.generator, file.lookback, Standardization { mean: file.mean, std: file.std })
        }
        None => {
            let (clipped, stats) = preprocess(&panel)?;
            let fit = fit_window(&clipped, &stats, 0, clipped.rows(), cfg.lookback)?;
            (fit.spec, cfg.lookback, stats)
        }
    };

    let (clipped, _) = preprocess(&panel)?;
    // Decision for the next day: context ends at the last available row.
    let t = clipped.rows();
    let x = make_context(&clipped, &stats, t, lookback)?;
    let problem = DecisionProblem::new(panel.assets(), cfg.lambda)?;
    let solve_cfg = RobustConfig {
        rho,
        seed: args.seed.unwrap_or(cfg.robust.seed),
        ..cfg.robust.clone()
    };
    let weights = decide(&generator, &x, &problem, &solve_cfg, solver, rho)?;
    let objective = robust_objective(&generator, &x, &problem, &weights, &solve_cfg)?;

    fs::create_dir_all(&args.out)?;
    let path = args.out.join("weights.json");
    write_json(
        &path,
        &WeightsFile {
            schema_version: SCHEMA_VERSION,
            solver: solver.to_string(),
            rho,
            seed: solve_cfg.seed,
            objective,
            tickers: panel.tickers.clone(),
            weights: weights.clone(),
        },
    )?;
    println!("robust criterion {objective:.6} at rho {rho} -> {}", path.display());
    for (ticker, w) in panel.tickers.iter().zip(&weights) {
        println!("  {ticker:>6}  {w:.4}");
    }
    Ok(())
}

/// History panel for studies that were not given one: synthetic, wide enough
/// to calibrate the oracle at the configured lookback.
fn fallback_history(cfg: &ExperimentConfig, seed: u64) -> ReturnPanel {
    let d = cfg.assets.max(2);
    let pairs_needed = cfg.lookback * d + d + 10;
    let rows = (cfg.lookback + pairs_needed + 50).max(2 * STATS_WINDOW);
    synth_panel(SynthConfig { assets: d, rows, seed })
}

fn cmd_certify(args: CertifyArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let panel = match &args.data {
        Some(path) => load_panel(path)?,
        None => fallback_history(&cfg, seed),
    };

    // Same per-seed preparation as the controlled study: oracle from the
    // history, synthetic path, nominal refit on its recent window.
    let (hist_clipped, hist_stats) = preprocess(&panel)?;
    let oracle = fit_window(&hist_clipped, &hist_stats, 0, hist_clipped.rows(), cfg.lookback)?.spec;
    let path = simulate_path(
        &oracle,
        &hist_clipped,
        &hist_stats,
        cfg.lookback,
        cfg.path_length,
        derive_seed(seed, "path"),
    )?;
    let (path_clipped, path_stats) = preprocess(&path)?;
    let splits = cfg.splits();
    let retrain_start = splits.train.end - cfg.retrain_window;
    let nominal =
        fit_window(&path_clipped, &path_stats, retrain_start, splits.train.end, cfg.lookback)?.spec;
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
        bail!("seed {seed} fails the validity screen: {}", screen.failures.join("; "));
    }

    let t = splits.test.start;
    let x_nom = make_context(&path_clipped, &path_stats, t, cfg.lookback)?;
    let x_orc = make_context(&path, &hist_stats, t, cfg.lookback)?;
    let problem = DecisionProblem::new(panel.assets(), cfg.lambda)?;
    let grid = sro_core::certificate::omega_grid(
        problem.n_assets,
        cfg.omega_grid_size,
        derive_seed(seed, "omega-grid"),
        &[],
    )?;
    let base_cfg =
        RobustConfig { seed: derive_seed(seed, "cert-solve"), ..cfg.robust.clone() };
    let rows = rho_sweep(
        &oracle,
        &nominal,
        &x_orc,
        &x_nom,
        &problem,
        &base_cfg,
        &cfg.rho_grid,
        &grid,
        CLIP,
        CERT_DELTA,
        cfg.n_oracle,
        derive_seed(seed, "slack-mc"),
    )?;

    fs::create_dir_all(&args.out)?;
    let path_out = args.out.join("certificate_sweep.csv");
    let mut buffer = Vec::new();
    write_sweep_csv(&rows, &mut buffer)?;
    fs::write(&path_out, buffer)?;
    println!("rho sweep over {} budgets (seed {seed}) -> {}", rows.len(), path_out.display());
    for row in &rows {
        println!(
            "  rho {:>6}  mu_bar {:>12.6}  epsilon_n {:>10.6}  regime {}",
            row.rho, row.mu_bar, row.epsilon_n, row.regime
        );
    }
    Ok(())
}

fn cmd_study(args: StudyArgs, mode: Mode) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    cfg.mode = mode;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(rho) = args.rho {
        cfg.rho_grid = vec![rho];
    }
    cfg.solver = parse_solver(&args.solver, cfg.solver)?;

    let data = args.data.clone().or_else(|| cfg.data.clone());
    let study = match mode {
        Mode::Controlled => {
            let panel = match data {
                Some(path) => load_panel(&path)?,
                None => fallback_history(&cfg, cfg.seeds[0]),
            };
            run_controlled(&cfg, &panel)?
        }
        Mode::Backtest => {
            let path = data.context("backtests need --data (or `data` in the config)")?;
            run_backtest(&cfg, &load_panel(&path)?)?
        }
    };

    for run in &study.runs {
        if let Some(reason) = &run.excluded {
            eprintln!("seed {} excluded by the validity screen: {reason}", run.seed);
        }
    }
    if study.included() == 0 {
        return Err(sro_harness::ExperimentError::AllSeedsExcluded(study.runs.len()).into());
    }

    write_study(&args.out, &study)?;
    println!(
        "{} study: {} of {} seeds included -> {}",
        match mode {
            Mode::Controlled => "controlled",
            Mode::Backtest => "backtest",
        },
        study.included(),
        study.runs.len(),
        args.out.display()
    );
    print_aggregates(&sro_harness::report::aggregate(&sro_harness::report::per_seed_rows(
        &study,
    )?));
    print_certificate_summary(&study);
    Ok(())
}

fn print_aggregates(rows: &[AggregateRow]) {
    println!("{:>8} {:>14} {:>14} {:>14} {:>6}", "method", "metric", "mean", "std", "seeds");
    for row in rows {
        println!(
            "{:>8} {:>14} {:>14.6} {:>14.6} {:>6}",
            row.method.to_string(),
            row.metric,
            row.mean,
            row.std,
            row.seeds
        );
    }
}

fn print_certificate_summary(study: &StudyResult) {
    for run in &study.runs {
        if let Some(cert) = &run.certificate {
            println!(
                "seed {}: slack {:.6}, epsilon_n {:.6}, regime {}, coverage {} (distance {:.4})",
                run.seed,
                cert.slack_mu_bar,
                cert.epsilon_n,
                cert.regime,
                cert.coverage,
                cert.coverage_distance
            );
        }
    }
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let rows = verify_aggregates(&args.out, 1e-12)
        .with_context(|| format!("verifying study in {}", args.out.display()))?;
    println!("aggregates verified against per-seed rows (tolerance 1e-12)");
    print_aggregates(&rows);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let panel = synth_panel(SynthConfig { assets: args.assets, rows: args.rows, seed: args.seed });
    fs::create_dir_all(&args.out)?;
    let path = args.out.join("panel.csv");
    let mut buffer = Vec::new();
    emit_csv(&panel, &mut buffer)?;
    fs::write(&path, buffer)?;
    println!(
        "synthetic panel: {} rows x {} assets (seed {}) -> {}",
        args.rows,
        args.assets,
        args.seed,
        path.display()
    );
    Ok(())
}

//! Experiment configuration, data splits, and shared decision plumbing.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sro_core::calibrate::{calibrate_affine, CalibrateError, CalibrationResult};
use sro_core::certificate::CertificateError;
use sro_core::generator::{GeneratorError, GeneratorSpec, LatentBatch};
use sro_core::loss::{empirical_utility, utility, DecisionProblem, LossError};
use sro_core::solver::{
    solve_nominal, solve_sro_first_order, solve_sro_two_timescale, RobustConfig, SolverError,
};
use thiserror::Error;

use crate::metrics::MetricsError;
use crate::panel::PanelError;
use crate::preprocess::{make_context, PreprocessError, Standardization};
use crate::panel::ReturnPanel;
use crate::screen::ScreenError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("bad experiment config: {0}")]
    Config(String),
    #[error("all {0} seeds were excluded by the validity screen")]
    AllSeedsExcluded(usize),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Geometry(#[from] sro_core::geometry::GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Controlled,
    Backtest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    FirstOrder,
    TwoTimescale,
}

impl fmt::Display for SolverChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverChoice::FirstOrder => write!(f, "first-order"),
            SolverChoice::TwoTimescale => write!(f, "two-timescale"),
        }
    }
}

impl FromStr for SolverChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first-order" => Ok(SolverChoice::FirstOrder),
            "two-timescale" => Ok(SolverChoice::TwoTimescale),
            other => Err(format!("unknown solver {other:?} (expected first-order or two-timescale)")),
        }
    }
}

/// Statistic maximized over the perturbation-budget grid on validation days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationCriterion {
    Sharpe,
    MeanUtility,
    Cvar5,
}

/// Full experiment description; serialized as JSON for the CLI `--config`
/// flag, with every field optional (missing fields take these defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Rows of history flattened into each decision context.
    pub lookback: usize,
    /// Synthetic path length (controlled mode only).
    pub path_length: usize,
    /// Rows before the first validation decision.
    pub train_rows: usize,
    pub validation_rows: usize,
    pub test_rows: usize,
    /// Most recent training rows the nominal generator is fitted on
    /// (controlled mode; backtests always fit on the whole training window).
    pub retrain_window: usize,
    /// Ticker subset size drawn per seed (backtest mode only).
    pub assets: usize,
    pub seeds: Vec<u64>,
    /// Perturbation budgets tried on validation days; a singleton grid skips
    /// validation and uses its only entry.
    pub rho_grid: Vec<f64>,
    pub validation_criterion: ValidationCriterion,
    pub solver: SolverChoice,
    /// Solver hyperparameters; `rho` and `seed` are overridden per run.
    pub robust: RobustConfig<f64>,
    /// Risk-aversion coefficient of the quadratic utility.
    pub lambda: f64,
    /// Monte Carlo draws per oracle-utility evaluation.
    pub n_oracle: usize,
    /// Decision-grid size for the slack estimate.
    pub omega_grid_size: usize,
    /// Generator draws in the validity screen.
    pub screen_samples: usize,
    /// Return panel CSV; `None` when the caller passes a panel directly.
    pub data: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Controlled,
            lookback: 10,
            path_length: 1000,
            train_rows: 800,
            validation_rows: 100,
            test_rows: 100,
            retrain_window: 800,
            assets: 10,
            seeds: (40..60).collect(),
            rho_grid: vec![0.05, 0.1, 0.2, 0.3],
            validation_criterion: ValidationCriterion::Sharpe,
            solver: SolverChoice::TwoTimescale,
            robust: RobustConfig::baseline(),
            lambda: 10.0,
            n_oracle: 100_000,
            omega_grid_size: 16,
            screen_samples: 2000,
            data: None,
        }
    }
}

/// Row ranges of the panel (or synthetic path): `validation` and `test` are
/// decision days, with the context window and realized return both indexed
/// by the decision day itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn splits(&self) -> Splits {
        let v0 = self.train_rows;
        let t0 = v0 + self.validation_rows;
        Splits { train: 0..v0, validation: v0..t0, test: t0..t0 + self.test_rows }
    }

    /// Rows a run consumes: the synthetic path in controlled mode, the panel
    /// prefix in backtest mode.
    pub fn required_rows(&self) -> usize {
        self.train_rows + self.validation_rows + self.test_rows
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |message: String| Err(ExperimentError::Config(message));
        if self.lookback == 0 {
            return bad("lookback must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.rho_grid.is_empty() {
            return bad("rho_grid must not be empty".into());
        }
        for &rho in &self.rho_grid {
            if !rho.is_finite() || rho < 0.0 {
                return bad(format!("rho_grid entries must be finite and >= 0, got {rho}"));
            }
        }
        if self.test_rows < 2 {
            return bad("test_rows must be at least 2 to summarize returns".into());
        }
        if self.rho_grid.len() > 1 && self.validation_rows < 2 {
            return bad("validation_rows must be at least 2 when rho_grid has several entries".into());
        }
        if self.train_rows <= self.lookback {
            return bad("train_rows must exceed the lookback".into());
        }
        if self.mode == Mode::Controlled {
            if self.required_rows() != self.path_length {
                return bad(format!(
                    "train + validation + test rows ({}) must equal path_length ({})",
                    self.required_rows(),
                    self.path_length
                ));
            }
            if self.retrain_window == 0 || self.retrain_window > self.train_rows {
                return bad("retrain_window must lie in 1..=train_rows".into());
            }
            if self.path_length < crate::preprocess::STATS_WINDOW {
                return bad("path_length too short to estimate standardization statistics".into());
            }
        }
        if self.mode == Mode::Backtest && self.assets == 0 {
            return bad("assets must be positive".into());
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return bad(format!("lambda must be finite and positive, got {}", self.lambda));
        }
        if self.n_oracle < 2 {
            return bad("n_oracle must be at least 2".into());
        }
        if self.omega_grid_size == 0 {
            return bad("omega_grid_size must be positive".into());
        }
        if self.screen_samples < 2 {
            return bad("screen_samples must be at least 2".into());
        }
        self.robust.validate()?;
        Ok(())
    }
}

/// Deterministic per-purpose seed derivation: FNV-1a over the tag folded
/// into the base seed through a SplitMix64 finalizer, so distinct tags give
/// statistically unrelated streams and the mapping never changes across runs.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in tag.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = base ^ hash;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Flattened (context, target) pairs for rows `start..end`: the target is
/// row `t`, the context the standardized `lookback` rows before it. Rows
/// whose window would reach before the panel start are skipped.
pub fn build_pairs(
    clipped: &ReturnPanel,
    stats: &Standardization,
    start: usize,
    end: usize,
    lookback: usize,
) -> Result<(Vec<f64>, Vec<f64>), PreprocessError> {
    let first = start.max(lookback);
    let d = clipped.assets();
    let mut contexts = Vec::with_capacity((end - first) * lookback * d);
    let mut targets = Vec::with_capacity((end - first) * d);
    for t in first..end {
        contexts.extend(make_context(clipped, stats, t, lookback)?);
        targets.extend_from_slice(clipped.row(t));
    }
    Ok((contexts, targets))
}

/// Fits the affine family on the rows `start..end` of a clipped panel.
pub fn fit_window(
    clipped: &ReturnPanel,
    stats: &Standardization,
    start: usize,
    end: usize,
    lookback: usize,
) -> Result<CalibrationResult<f64>, ExperimentError> {
    let (contexts, targets) = build_pairs(clipped, stats, start, end, lookback)?;
    let context_dim = lookback * clipped.assets();
    Ok(calibrate_affine(&contexts, &targets, context_dim, clipped.assets())?)
}

/// Robust decision with the configured solver at budget `rho`.
pub fn decide(
    gen: &GeneratorSpec<f64>,
    x: &[f64],
    problem: &DecisionProblem<f64>,
    cfg: &RobustConfig<f64>,
    solver: SolverChoice,
    rho: f64,
) -> Result<Vec<f64>, SolverError> {
    let cfg = RobustConfig { rho, ..cfg.clone() };
    let (weights, _) = match solver {
        SolverChoice::FirstOrder => solve_sro_first_order(gen, x, problem, &cfg),
        SolverChoice::TwoTimescale => solve_sro_two_timescale(gen, x, problem, &cfg),
    }?;
    Ok(weights.into_vec())
}

/// Nominal decision (no adversary) under the same step/batch configuration.
pub fn decide_nominal(
    gen: &GeneratorSpec<f64>,
    x: &[f64],
    problem: &DecisionProblem<f64>,
    cfg: &RobustConfig<f64>,
) -> Result<Vec<f64>, SolverError> {
    let (weights, _) = solve_nominal(gen, x, problem, cfg)?;
    Ok(weights.into_vec())
}

fn criterion_value(
    criterion: ValidationCriterion,
    returns: &[f64],
    lambda: f64,
) -> Result<f64, ExperimentError> {
    Ok(match criterion {
        // A constant return series has no Sharpe ratio; rank it below any
        // candidate that does.
        ValidationCriterion::Sharpe => {
            crate::metrics::summarize(returns)?.sharpe.unwrap_or(f64::NEG_INFINITY)
        }
        ValidationCriterion::MeanUtility => {
            returns.iter().map(|&r| utility(r, lambda)).sum::<f64>() / returns.len() as f64
        }
        ValidationCriterion::Cvar5 => crate::metrics::summarize(returns)?.cvar5,
    })
}

/// Picks the perturbation budget maximizing the validation criterion over
/// daily robust decisions. A singleton grid is returned directly without
/// solving; ties keep the earliest grid entry. All budgets share one latent
/// batch per day, so the comparison is paired.
#[allow(clippy::too_many_arguments)]
pub fn select_rho(
    cfg: &ExperimentConfig,
    problem: &DecisionProblem<f64>,
    gen: &GeneratorSpec<f64>,
    raw: &ReturnPanel,
    clipped: &ReturnPanel,
    stats: &Standardization,
    days: Range<usize>,
    seed: u64,
) -> Result<f64, ExperimentError> {
    if cfg.rho_grid.len() == 1 {
        return Ok(cfg.rho_grid[0]);
    }
    let mut best: Option<(f64, f64)> = None;
    for &rho in &cfg.rho_grid {
        let mut returns = Vec::with_capacity(days.len());
        for t in days.clone() {
            let x = make_context(clipped, stats, t, cfg.lookback)?;
            let solve_cfg = RobustConfig {
                seed: derive_seed(seed, &format!("val-{t}")),
                ..cfg.robust.clone()
            };
            let w = decide(gen, &x, problem, &solve_cfg, cfg.solver, rho)?;
            returns.push(crate::preprocess::realized_return(&w, raw.row(t))?);
        }
        let value = criterion_value(cfg.validation_criterion, &returns, cfg.lambda)?;
        if best.map(|(b, _)| value > b).unwrap_or(true) {
            best = Some((value, rho));
        }
    }
    Ok(best.expect("non-empty rho grid").1)
}

/// Empirical batch utility of a frozen decision at the generator's own
/// calibrated parameters, on the seeded latent batch.
pub fn batch_utility(
    gen: &GeneratorSpec<f64>,
    x: &[f64],
    problem: &DecisionProblem<f64>,
    w: &[f64],
    seed: u64,
    n: usize,
) -> Result<f64, ExperimentError>
where
    StandardNormal: rand_distr::Distribution<f64>,
{
    let batch = LatentBatch::<f64>::sample(seed, n, gen.dims.latent)?;
    let d = gen.dims.output;
    let mut ws = gen.workspace();
    let mut scenarios = vec![0.0; n * d];
    for i in 0..n {
        gen.forward_into(batch.row(i), x, &mut ws, &mut scenarios[i * d..(i + 1) * d]);
    }
    Ok(empirical_utility(w, &scenarios, problem.lambda)?)
}

//! Return preprocessing and context construction.
//!
//! Pipeline order matters and is fixed: clip extreme returns first, then
//! estimate per-asset location/scale from the first [`STATS_WINDOW`] clipped
//! rows only. Later rows never influence the statistics, so a model fitted
//! on standardized contexts cannot peek at its own future.

use thiserror::Error;

use crate::panel::ReturnPanel;

/// Daily log returns are clipped to this symmetric bound before any use.
pub const CLIP: f64 = 0.1;

/// Standardization statistics come from this many leading rows.
pub const STATS_WINDOW: usize = 100;

/// Scale floor guarding against degenerate (near-constant) assets.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("panel has {rows} rows, need at least {STATS_WINDOW} to estimate statistics")]
    TooFewRows { rows: usize },
    #[error("context at t={t} needs {lookback} prior rows")]
    TooEarly { t: usize, lookback: usize },
    #[error("context at t={t} is beyond the panel ({rows} rows)")]
    PastEnd { t: usize, rows: usize },
    #[error("weights have {got} entries, panel has {want} assets")]
    WeightLength { got: usize, want: usize },
}

/// Per-asset location/scale used to standardize model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn assets(&self) -> usize {
        self.mean.len()
    }
}

fn clip(value: f64) -> f64 {
    value.clamp(-CLIP, CLIP)
}

/// Clips the panel and estimates standardization statistics from its first
/// [`STATS_WINDOW`] rows. The scale is the sample standard deviation
/// (denominator `n - 1`), floored at [`STD_FLOOR`].
pub fn preprocess(panel: &ReturnPanel) -> Result<(ReturnPanel, Standardization), PreprocessError> {
    let rows = panel.rows();
    if rows < STATS_WINDOW {
        return Err(PreprocessError::TooFewRows { rows });
    }
    let d = panel.assets();
    let clipped = ReturnPanel {
        dates: panel.dates.clone(),
        tickers: panel.tickers.clone(),
        returns: panel.returns.iter().map(|&r| clip(r)).collect(),
    };

    // Accumulate deviations from the first row: a constant column then has an
    // exactly zero deviation sum, so its mean is exact and it standardizes to
    // exactly zero rather than to rounding noise over the scale floor.
    let first = clipped.row(0).to_vec();
    let mut mean = vec![0.0; d];
    for t in 0..STATS_WINDOW {
        for j in 0..d {
            mean[j] += clipped.row(t)[j] - first[j];
        }
    }
    for (m, f) in mean.iter_mut().zip(&first) {
        *m = f + *m / STATS_WINDOW as f64;
    }
    let mut var = vec![0.0; d];
    for t in 0..STATS_WINDOW {
        for j in 0..d {
            let dev = clipped.row(t)[j] - mean[j];
            var[j] += dev * dev;
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v / (STATS_WINDOW as f64 - 1.0)).sqrt().max(STD_FLOOR))
        .collect();

    Ok((clipped, Standardization { mean, std }))
}

/// Flattens the standardized window of `lookback` rows ending just before
/// `t` (rows `t - lookback .. t`), time-major: row `t - lookback` first.
pub fn make_context(
    clipped: &ReturnPanel,
    stats: &Standardization,
    t: usize,
    lookback: usize,
) -> Result<Vec<f64>, PreprocessError> {
    if t < lookback {
        return Err(PreprocessError::TooEarly { t, lookback });
    }
    if t > clipped.rows() {
        return Err(PreprocessError::PastEnd { t, rows: clipped.rows() });
    }
    let d = clipped.assets();
    assert_eq!(stats.assets(), d, "statistics/panel asset mismatch");
    let mut context = Vec::with_capacity(lookback * d);
    for row in (t - lookback)..t {
        for j in 0..d {
            context.push((clipped.row(row)[j] - stats.mean[j]) / stats.std[j]);
        }
    }
    Ok(context)
}

/// Simple net portfolio return for one day: weights applied to gross asset
/// returns `exp(r) - 1`. The input is the raw (unclipped) log-return row —
/// clipping is a modelling device and must not alter realized accounting.
pub fn realized_return(weights: &[f64], raw_log_returns: &[f64]) -> Result<f64, PreprocessError> {
    if weights.len() != raw_log_returns.len() {
        return Err(PreprocessError::WeightLength {
            got: weights.len(),
            want: raw_log_returns.len(),
        });
    }
    let gross: f64 = weights
        .iter()
        .zip(raw_log_returns)
        .map(|(w, r)| w * r.exp())
        .sum();
    Ok(gross - 1.0)
}

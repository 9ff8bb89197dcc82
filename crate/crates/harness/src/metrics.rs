//! Summary statistics over a daily net-return series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 returns, got {got}")]
    TooFew { got: usize },
    #[error("returns contain a non-finite value at index {index}")]
    NonFinite { index: usize },
}

/// All fields are per-day quantities; nothing is annualized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub mean: f64,
    pub std: f64,
    /// `mean / std`; absent when the series is constant (`std == 0`).
    pub sharpe: Option<f64>,
    /// Mean of the worst 5% of days (signed, so losses are negative).
    pub cvar5: f64,
    /// Maximum drawdown of the compounded wealth path, as a fraction of the
    /// running peak. Zero when wealth never dips below a previous peak.
    pub max_drawdown: f64,
}

pub fn summarize(returns: &[f64]) -> Result<SummaryMetrics, MetricsError> {
    let n = returns.len();
    if n < 2 {
        return Err(MetricsError::TooFew { got: n });
    }
    if let Some(index) = returns.iter().position(|r| !r.is_finite()) {
        return Err(MetricsError::NonFinite { index });
    }

    // Deviations are accumulated around the first value so a constant series
    // gets an exact mean and an exactly zero variance (and thus no Sharpe).
    let mean = returns[0] + returns.iter().map(|r| r - returns[0]).sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n as f64 - 1.0);
    let std = var.sqrt();
    let sharpe = if std == 0.0 { None } else { Some(mean / std) };

    // CVaR at the 5% level: average the k = ceil(0.05 n) smallest returns.
    let mut sorted = returns.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite returns"));
    let k = ((0.05 * n as f64).ceil() as usize).max(1);
    let cvar5 = sorted[..k].iter().sum::<f64>() / k as f64;

    // Drawdown over compounded wealth starting at 1; the start counts as a peak.
    let mut wealth = 1.0;
    let mut peak = 1.0;
    let mut max_drawdown = 0.0f64;
    for r in returns {
        wealth *= 1.0 + r;
        if wealth > peak {
            peak = wealth;
        }
        max_drawdown = max_drawdown.max((peak - wealth) / peak);
    }

    Ok(SummaryMetrics { mean, std, sharpe, cvar5, max_drawdown })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_day_series_matches_hand_computation() {
        let r = [-0.02, 0.01, 0.03, -0.05];
        let m = summarize(&r).unwrap();
        let mean = -0.0075;
        assert!((m.mean - mean).abs() < 1e-15);
        let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((m.std - var.sqrt()).abs() < 1e-15);
        // ceil(0.05 * 4) = 1, so CVaR5 is the single worst day.
        assert_eq!(m.cvar5, -0.05);
        assert!((m.sharpe.unwrap() - mean / var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_series_has_no_sharpe_and_no_drawdown() {
        let m = summarize(&[0.01; 30]).unwrap();
        assert_eq!(m.std, 0.0);
        assert_eq!(m.sharpe, None);
        assert_eq!(m.max_drawdown, 0.0);
        assert_eq!(m.cvar5, 0.01);
        // Zero constant works the same way.
        let z = summarize(&[0.0; 10]).unwrap();
        assert_eq!(z.sharpe, None);
        assert_eq!(z.max_drawdown, 0.0);
    }

    #[test]
    fn gain_then_loss_draws_down_from_the_peak() {
        // Wealth: 1 -> 1.1 -> 0.99; drawdown (1.1 - 0.99) / 1.1 = 0.1.
        let m = summarize(&[0.1, -0.1]).unwrap();
        assert!((m.max_drawdown - 0.1).abs() < 1e-15);
    }

    #[test]
    fn initial_loss_counts_the_starting_peak() {
        let m = summarize(&[-0.2, 0.05]).unwrap();
        // Peak is the initial wealth of 1, trough 0.8.
        assert!((m.max_drawdown - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cvar_pools_the_tail_for_longer_series() {
        // 40 points: k = ceil(2) = 2 worst days averaged.
        let mut r = vec![0.01; 38];
        r.push(-0.06);
        r.push(-0.02);
        let m = summarize(&r).unwrap();
        assert!((m.cvar5 - (-0.04)).abs() < 1e-15);
    }

    #[test]
    fn short_and_bad_input_rejected() {
        assert!(matches!(summarize(&[0.01]), Err(MetricsError::TooFew { got: 1 })));
        assert!(matches!(
            summarize(&[0.01, f64::NAN]),
            Err(MetricsError::NonFinite { index: 1 })
        ));
    }
}

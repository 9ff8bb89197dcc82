//! Synthetic market panels for demos and end-to-end tests.
//!
//! A mild first-order vector autoregression with correlated Gaussian shocks:
//! enough cross-sectional and serial structure for a windowed affine model
//! to pick up, scaled like daily equity log returns (~1% dispersion) so the
//! clipping threshold almost never binds.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::panel::ReturnPanel;

/// Reference ticker list; synthetic panels name their columns from it.
pub const UNIVERSE: &str = include_str!("../assets/universe.txt");

pub fn universe() -> Vec<&'static str> {
    UNIVERSE.lines().filter(|l| !l.is_empty()).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub assets: usize,
    pub rows: usize,
    pub seed: u64,
}

/// First weekday at or after `date`.
fn next_weekday(mut date: NaiveDate) -> NaiveDate {
    while matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
        date = date.succ_opt().expect("date range");
    }
    date
}

/// Strictly increasing weekday sequence starting at the first weekday at or
/// after `first`.
pub fn trading_dates_from(first: NaiveDate, rows: usize) -> Vec<NaiveDate> {
    let mut dates = Vec::with_capacity(rows);
    let mut date = next_weekday(first);
    for _ in 0..rows {
        dates.push(date);
        date = next_weekday(date.succ_opt().expect("date range"));
    }
    dates
}

/// Strictly increasing weekday sequence starting 2020-05-15.
pub fn trading_dates(rows: usize) -> Vec<NaiveDate> {
    trading_dates_from(NaiveDate::from_ymd_opt(2020, 5, 15).expect("valid date"), rows)
}

pub fn synth_panel(cfg: SynthConfig) -> ReturnPanel {
    assert!(cfg.assets > 0 && cfg.rows > 0, "empty synthetic panel");
    let d = cfg.assets;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Drift, AR coefficient matrix, and shock loadings, all drawn once.
    let drift: Vec<f64> = (0..d).map(|_| 1e-4 + 4e-4 * rng.gen::<f64>()).collect();
    let mut ar = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            ar[i * d + j] = if i == j {
                0.05 + 0.1 * rng.gen::<f64>()
            } else {
                // Weak cross terms, shrunk with dimension to keep the
                // spectral radius well below one.
                0.05 / d as f64 * (rng.gen::<f64>() - 0.5)
            };
        }
    }
    let mut loadings = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            loadings[i * d + j] = if i == j {
                0.006 + 0.006 * rng.gen::<f64>()
            } else {
                0.002 * rng.sample::<f64, _>(StandardNormal)
            };
        }
    }

    let mut returns = Vec::with_capacity(cfg.rows * d);
    let mut prev = vec![0.0; d];
    let mut shock = vec![0.0; d];
    for _ in 0..cfg.rows {
        for s in shock.iter_mut() {
            *s = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut r = drift[i];
            for j in 0..d {
                r += ar[i * d + j] * prev[j];
            }
            for j in 0..=i {
                r += loadings[i * d + j] * shock[j];
            }
            returns.push(r);
        }
        prev.copy_from_slice(&returns[returns.len() - d..]);
    }

    let names = universe();
    let tickers = (0..d)
        .map(|j| names.get(j).map(|s| (*s).to_owned()).unwrap_or_else(|| format!("SYN{j:02}")))
        .collect();
    ReturnPanel::new(trading_dates(cfg.rows), tickers, returns).expect("non-empty panel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universe_has_fifty_distinct_tickers() {
        let names = universe();
        assert_eq!(names.len(), 50);
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
        assert!(names.contains(&"AAPL") && names.contains(&"NFLX"));
    }

    #[test]
    fn dates_are_strictly_increasing_weekdays() {
        let dates = trading_dates(300);
        assert_eq!(dates[0], NaiveDate::from_ymd_opt(2020, 5, 15).unwrap());
        for pair in dates.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert!(dates
            .iter()
            .all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
    }

    #[test]
    fn panel_is_deterministic_and_daily_scaled() {
        let cfg = SynthConfig { assets: 5, rows: 400, seed: 11 };
        let a = synth_panel(cfg);
        let b = synth_panel(cfg);
        assert_eq!(a, b);
        assert_eq!(a.rows(), 400);
        assert_eq!(a.tickers[0], "AAPL");
        // Returns should look like daily equities: small, not degenerate.
        let max = a.returns.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(max < 0.1, "synthetic returns too wild: {max}");
        let var = a.returns.iter().map(|r| r * r).sum::<f64>() / a.returns.len() as f64;
        assert!(var.sqrt() > 1e-3, "synthetic returns degenerate");
    }

    #[test]
    fn seeds_change_the_panel() {
        let a = synth_panel(SynthConfig { assets: 3, rows: 50, seed: 1 });
        let b = synth_panel(SynthConfig { assets: 3, rows: 50, seed: 2 });
        assert_ne!(a.returns, b.returns);
    }
}

//! Calibration validity screen.
//!
//! Before a freshly calibrated generator is trusted with decisions, its
//! per-asset sample moments are compared against the data it was fitted on.
//! A generator whose dispersion has collapsed, or whose location has drifted
//! far from the observations, fails the screen and the run is excluded
//! rather than silently producing meaningless portfolios.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sro_core::generator::{GeneratorError, GeneratorSpec};
use thiserror::Error;

use crate::panel::ReturnPanel;
use crate::preprocess::{make_context, PreprocessError, Standardization};

#[derive(Debug, Error)]
pub enum ScreenError {
    #[error("screen needs at least 2 samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("training slice {start}..{end} holds no usable rows (lookback {lookback})")]
    EmptySlice { start: usize, end: usize, lookback: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Per-asset moment comparison; `failures` is human-readable, one line per
/// violated condition, and is emitted regardless of the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenDiagnostics {
    pub pass: bool,
    pub observed_mean: Vec<f64>,
    pub observed_std: Vec<f64>,
    pub generated_mean: Vec<f64>,
    pub generated_std: Vec<f64>,
    pub failures: Vec<String>,
}

/// Fraction of the observed dispersion the generator must strictly exceed.
pub const MIN_STD_RATIO: f64 = 0.1;

/// Allowed location drift in units of the observed standard deviation.
pub const MAX_MEAN_DRIFT: f64 = 5.0;

/// Compares generated moments against the observed rows `start..end` of the
/// clipped panel (the calibration targets). Generated draws reuse the same
/// contexts the calibration saw, cycling through them with fresh latents.
///
/// Failure conditions, per asset: generated std at or below
/// [`MIN_STD_RATIO`] of the observed std (a boundary hit fails), or a mean
/// gap strictly larger than [`MAX_MEAN_DRIFT`] observed stds.
#[allow(clippy::too_many_arguments)]
pub fn validity_screen(
    gen: &GeneratorSpec<f64>,
    clipped: &ReturnPanel,
    stats: &Standardization,
    start: usize,
    end: usize,
    lookback: usize,
    samples: usize,
    seed: u64,
) -> Result<ScreenDiagnostics, ScreenError> {
    if samples < 2 {
        return Err(ScreenError::TooFewSamples { got: samples });
    }
    let first = start.max(lookback);
    if first >= end || end > clipped.rows() {
        return Err(ScreenError::EmptySlice { start, end, lookback });
    }
    let d = clipped.assets();
    let n_obs = end - first;

    // Deviation accumulation around the first observed row keeps constant
    // columns at an exactly zero std, so the boundary semantics below stay
    // exact instead of drowning in rounding noise.
    let anchor = clipped.row(first).to_vec();
    let mut observed_mean = vec![0.0; d];
    for t in first..end {
        for j in 0..d {
            observed_mean[j] += clipped.row(t)[j] - anchor[j];
        }
    }
    for (m, a) in observed_mean.iter_mut().zip(&anchor) {
        *m = a + *m / n_obs as f64;
    }
    let mut observed_var = vec![0.0; d];
    for t in first..end {
        for j in 0..d {
            let dev = clipped.row(t)[j] - observed_mean[j];
            observed_var[j] += dev * dev;
        }
    }
    let observed_std: Vec<f64> = observed_var
        .iter()
        .map(|v| if n_obs > 1 { (v / (n_obs as f64 - 1.0)).sqrt() } else { 0.0 })
        .collect();

    // Generated moments: Welford per asset over `samples` draws, one latent
    // per draw, contexts cycling deterministically over the slice.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; gen.dims.latent];
    let mut y = vec![0.0; d];
    let mut ws = gen.workspace();
    let mut generated_mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for i in 0..samples {
        let t = first + (i % n_obs);
        let x = make_context(clipped, stats, t, lookback)?;
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        gen.forward_into(&z, &x, &mut ws, &mut y);
        let count = (i + 1) as f64;
        for j in 0..d {
            let delta = y[j] - generated_mean[j];
            generated_mean[j] += delta / count;
            m2[j] += delta * (y[j] - generated_mean[j]);
        }
    }
    let generated_std: Vec<f64> =
        m2.iter().map(|v| (v / (samples as f64 - 1.0)).sqrt()).collect();

    let mut failures = Vec::new();
    for j in 0..d {
        let ticker = &clipped.tickers[j];
        if generated_std[j] <= MIN_STD_RATIO * observed_std[j] {
            failures.push(format!(
                "{ticker}: generated std {:.3e} at or below {:.0}% of observed {:.3e}",
                generated_std[j],
                MIN_STD_RATIO * 100.0,
                observed_std[j]
            ));
        }
        let drift = (generated_mean[j] - observed_mean[j]).abs();
        if drift > MAX_MEAN_DRIFT * observed_std[j] {
            failures.push(format!(
                "{ticker}: mean drift {:.3e} exceeds {MAX_MEAN_DRIFT} observed stds ({:.3e})",
                drift, observed_std[j]
            ));
        }
    }

    Ok(ScreenDiagnostics {
        pass: failures.is_empty(),
        observed_mean,
        observed_std,
        generated_mean,
        generated_std,
        failures,
    })
}

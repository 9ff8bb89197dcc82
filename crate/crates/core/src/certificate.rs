//! Reliability certificate: how far can the in-model robust criterion be
//! trusted as a statement about the true market?
//!
//! The pieces fit a one-line bound. Let `J*(w)` be the true expected utility
//! of a decision under the oracle generator, `U_N(w)` the empirical robust
//! criterion under the calibrated generator, `mu_bar` the population slack
//! `inf_w [J*(w) - U(w)]` (non-negative whenever the ball covers the oracle),
//! and `epsilon_N` the finite-sample uniform deviation built from Lipschitz
//! constants and a simplex covering number. Then with probability `1 - delta`
//!
//! `J*(w) <= U_N(w) + epsilon_N - mu_bar`  for all `w` simultaneously.
//!
//! Everything here estimates one of those four quantities or combines them:
//! Monte Carlo oracle utility, generalization gaps, grid-based slack,
//! closed-form constants, and a small/moderate/large regime classification of
//! the perturbation budget.

use nalgebra::{DMatrix, RealField};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{GeneratorError, GeneratorSpec};
use crate::geometry::{ball_membership, lp_norm, GeometryError, NormExponent, PerturbationBall};
use crate::loss::{dot, utility, DecisionProblem, LossError};
use crate::scalar::{real, Scalar};
use crate::solver::{robust_objective, RobustConfig, SolverError};

/// Default Monte Carlo sample count for oracle-utility estimates.
pub const DEFAULT_ORACLE_SAMPLES: usize = 100_000;

/// Fraction of `epsilon_N` below which the slack counts as negligible.
pub const REGIME_TAU: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("oracle samples must be at least 2, got {n}")]
    TooFewSamples { n: usize },
    #[error("confidence level delta must lie in (0, 1), got {delta}")]
    BadDelta { delta: f64 },
    #[error("return bound must be positive, got {bound}")]
    BadReturnBound { bound: f64 },
    #[error("certificate constants require an affine generator")]
    NonAffine,
    #[error("generators disagree: oracle is {oracle}, nominal is {nominal}")]
    KindMismatch { oracle: String, nominal: String },
    #[error("generator dims disagree between oracle and nominal")]
    DimsMismatch,
    #[error("decision grid is empty")]
    EmptyGrid,
    #[error("weight vector length {got} does not match asset count {expected}")]
    WeightLength { expected: usize, got: usize },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub samples: usize,
}

/// True (oracle-generator) expected utility of a decision at a context,
/// estimated by fresh seeded Monte Carlo. Draws are streamed, so large sample
/// counts cost no memory.
pub fn oracle_utility<T: Scalar>(
    oracle: &GeneratorSpec<T>,
    x: &[T],
    problem: &DecisionProblem<T>,
    w: &[T],
    samples: usize,
    seed: u64,
) -> Result<OracleEstimate<T>, CertificateError>
where
    StandardNormal: Distribution<T>,
{
    oracle.validate()?;
    if samples < 2 {
        return Err(CertificateError::TooFewSamples { n: samples });
    }
    let d = oracle.dims.output;
    if w.len() != d {
        return Err(CertificateError::WeightLength { expected: d, got: w.len() });
    }
    if x.len() != oracle.dims.context {
        return Err(GeneratorError::Shape {
            axis: "context",
            expected: oracle.dims.context,
            got: x.len(),
        }
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![T::zero(); oracle.dims.latent];
    let mut y = vec![T::zero(); d];
    let mut ws = oracle.workspace();
    // Welford accumulation keeps the variance stable for large sample counts.
    let mut mean = T::zero();
    let mut m2 = T::zero();
    for i in 0..samples {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        oracle.forward_into(&z, x, &mut ws, &mut y);
        let u = utility(dot(w, &y), problem.lambda);
        let count: T = real((i + 1) as f64);
        let delta = u - mean;
        mean += delta / count;
        m2 += delta * (u - mean);
    }
    let n_t: T = real(samples as f64);
    let variance = m2 / (n_t - T::one());
    Ok(OracleEstimate { value: mean, std_error: (variance / n_t).sqrt(), samples })
}

/// Generalization gaps: in-model value minus true value, for the nominal
/// decision (empirical utility vs oracle) and the robust decision (robust
/// criterion vs oracle). Positive gaps mean the model flattered the decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport<T> {
    pub gap_nominal: T,
    pub gap_robust: T,
}

/// Combines precomputed values; kept as plain differences so reports can be
/// re-derived from their parts exactly.
pub fn gaps<T: Scalar>(
    empirical_nominal: T,
    oracle_nominal: T,
    robust_criterion: T,
    oracle_robust: T,
) -> GapReport<T> {
    GapReport {
        gap_nominal: empirical_nominal - oracle_nominal,
        gap_robust: robust_criterion - oracle_robust,
    }
}

/// Deterministic decision grid: all simplex vertices, then caller-supplied
/// extra points (e.g. solver outputs), then seeded random simplex points up
/// to `size` total.
pub fn omega_grid<T: Scalar>(
    n_assets: usize,
    size: usize,
    seed: u64,
    extras: &[Vec<T>],
) -> Result<Vec<Vec<T>>, CertificateError> {
    if n_assets == 0 {
        return Err(CertificateError::WeightLength { expected: 1, got: 0 });
    }
    let mut grid: Vec<Vec<T>> = Vec::new();
    for i in 0..n_assets {
        let mut vertex = vec![T::zero(); n_assets];
        vertex[i] = T::one();
        grid.push(vertex);
    }
    for extra in extras {
        if extra.len() != n_assets {
            return Err(CertificateError::WeightLength { expected: n_assets, got: extra.len() });
        }
        grid.push(extra.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while grid.len() < size {
        // Normalized exponentials are uniform on the simplex.
        let draws: Vec<T> = (0..n_assets)
            .map(|_| {
                let u: f64 = 1.0 - rng.gen::<f64>();
                real::<T>(-u.ln())
            })
            .collect();
        let total: T = draws.iter().copied().sum();
        if total > T::zero() {
            grid.push(draws.into_iter().map(|e| e / total).collect());
        } else {
            grid.push(vec![T::one() / real(n_assets as f64); n_assets]);
        }
    }
    Ok(grid)
}

/// Grid-based estimate of the population slack
/// `mu_bar = inf_w [J*(w) - U(w)]`, the margin by which true utility exceeds
/// the robust criterion. Non-negative (up to Monte Carlo error) whenever the
/// ball covers the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackEstimate<T> {
    pub mu_bar: T,
    /// Grid point attaining the minimum.
    pub argmin: Vec<T>,
    pub grid_size: usize,
}

/// Estimates the slack on a decision grid. `x_oracle` and `x_nominal` are the
/// same market window expressed in each generator's own standardization (they
/// coincide when both share one preprocessing pipeline).
#[allow(clippy::too_many_arguments)]
pub fn slack_estimate<T: Scalar>(
    oracle: &GeneratorSpec<T>,
    nominal: &GeneratorSpec<T>,
    x_oracle: &[T],
    x_nominal: &[T],
    problem: &DecisionProblem<T>,
    cfg: &RobustConfig<T>,
    grid: &[Vec<T>],
    oracle_samples: usize,
    oracle_seed: u64,
) -> Result<SlackEstimate<T>, CertificateError>
where
    StandardNormal: Distribution<T>,
{
    if grid.is_empty() {
        return Err(CertificateError::EmptyGrid);
    }
    let mut best: Option<(T, usize)> = None;
    for (idx, w) in grid.iter().enumerate() {
        let j_star = oracle_utility(oracle, x_oracle, problem, w, oracle_samples, oracle_seed)?;
        let robust = robust_objective(nominal, x_nominal, problem, w, cfg)?;
        let margin = j_star.value - robust;
        if best.map(|(b, _)| margin < b).unwrap_or(true) {
            best = Some((margin, idx));
        }
    }
    let (mu_bar, idx) = best.expect("non-empty grid");
    Ok(SlackEstimate { mu_bar, argmin: grid[idx].clone(), grid_size: grid.len() })
}

/// Did the perturbation ball around the nominal parameters actually contain
/// the oracle parameters?
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport<T> {
    pub covered: bool,
    /// `||theta_oracle - theta_nominal||_p` in the ball norm.
    pub distance: T,
}

pub fn coverage_check<T: Scalar>(
    oracle: &GeneratorSpec<T>,
    nominal: &GeneratorSpec<T>,
    ball: &PerturbationBall<T>,
) -> Result<CoverageReport<T>, CertificateError> {
    oracle.validate()?;
    nominal.validate()?;
    if oracle.kind != nominal.kind {
        return Err(CertificateError::KindMismatch {
            oracle: format!("{:?}", oracle.kind),
            nominal: format!("{:?}", nominal.kind),
        });
    }
    if oracle.dims != nominal.dims {
        return Err(CertificateError::DimsMismatch);
    }
    let deviation: Vec<T> =
        oracle.theta.iter().zip(&nominal.theta).map(|(o, n)| *o - *n).collect();
    let distance = lp_norm(&deviation, ball.exponent);
    let centered = PerturbationBall::new(nominal.theta.clone(), ball.radius, ball.exponent)?;
    let covered = ball_membership(&oracle.theta, &centered)?;
    Ok(CoverageReport { covered, distance })
}

/// Perturbation-budget regime relative to the statistical error floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Slack is negligible: robustness is nearly free.
    Small,
    /// Slack is material but below the error floor.
    Moderate,
    /// Slack dominates the error floor: the budget is costing real utility.
    Large,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Small => "small",
            Regime::Moderate => "moderate",
            Regime::Large => "large",
        };
        f.write_str(s)
    }
}

/// Classifies `mu_bar` against `epsilon_N` with threshold [`REGIME_TAU`].
/// Negative slack estimates (Monte Carlo noise around zero) classify small.
pub fn classify_regime<T: Scalar>(mu_bar: T, epsilon_n: T) -> Regime {
    assert!(epsilon_n > T::zero(), "epsilon_N must be positive");
    let tau: T = real(REGIME_TAU);
    if mu_bar <= tau * epsilon_n {
        Regime::Small
    } else if mu_bar < epsilon_n {
        Regime::Moderate
    } else {
        Regime::Large
    }
}

/// The Lipschitz constants and the resulting uniform deviation bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport<T> {
    /// Uniform deviation bound `epsilon_N`.
    pub epsilon_n: T,
    /// Utility sensitivity to the scenario: `1 + lambda d R`.
    pub l_y: T,
    /// Scenario sensitivity to the latent draw over the ball: `||B|| + rho`-type bound.
    pub l_z: T,
    /// Utility sensitivity to the decision: `L_y R sqrt(d)`.
    pub l_omega: T,
    /// Covering resolution at which the bound was evaluated.
    pub epsilon_cover: T,
}

/// Finite-sample uniform deviation bound for the affine family.
///
/// `return_bound` is the operating range `R` with scenario returns treated as
/// bounded by `R` per asset (the harness supplies the clipping threshold).
/// With covering number `N(eps) = (3/eps)^d` on the simplex,
///
/// `epsilon_N(eps) = L_y L_z sqrt(2 (log N(eps) + log(1/delta)) / N) + 2 L_omega eps`,
///
/// minimized over a small grid of `eps` unless `epsilon_cover` pins one. A
/// single asset needs no cover (the simplex is a point), so the `eps` term
/// drops and the bound is evaluated at `eps = 0`.
#[allow(clippy::too_many_arguments)]
pub fn certificate_constants<T: Scalar + RealField>(
    nominal: &GeneratorSpec<T>,
    problem: &DecisionProblem<T>,
    return_bound: T,
    ball: &PerturbationBall<T>,
    epsilon_cover: Option<T>,
    delta: T,
    batch: usize,
) -> Result<ConstantsReport<T>, CertificateError> {
    nominal.validate()?;
    let layout = match nominal.affine_layout() {
        Some(layout) => layout,
        None => return Err(CertificateError::NonAffine),
    };
    let delta_f = delta.to_f64().unwrap_or(f64::NAN);
    if !(delta_f > 0.0 && delta_f < 1.0) {
        return Err(CertificateError::BadDelta { delta: delta_f });
    }
    if return_bound <= T::zero() {
        return Err(CertificateError::BadReturnBound {
            bound: return_bound.to_f64().unwrap_or(f64::NAN),
        });
    }
    if batch == 0 {
        return Err(CertificateError::TooFewSamples { n: 0 });
    }

    let d = nominal.dims.output;
    let dz = nominal.dims.latent;
    let d_t: T = real(d as f64);

    // Spectral norm of the calibrated B block.
    let b = DMatrix::<T>::from_fn(d, dz, |i, k| nominal.theta[layout.b.start + i * dz + k]);
    let spectral =
        b.singular_values().iter().fold(T::zero(), |m, s| if *s > m { *s } else { m });

    // A flat-vector p-ball bounds the Frobenius perturbation of the B block by
    // radius * m^max(0, 1/2 - 1/p) with m the number of B entries; Frobenius
    // dominates spectral.
    let m = (d * dz) as f64;
    let frobenius_factor: T = match ball.exponent {
        NormExponent::Inf => real(m.sqrt()),
        NormExponent::Finite(p) => real(m.powf((0.5 - 1.0 / p).max(0.0))),
    };
    let l_z = spectral + ball.radius * frobenius_factor;
    let l_y = T::one() + problem.lambda * d_t * return_bound;
    let l_omega = l_y * return_bound * Float::sqrt(d_t);

    let n_t: T = real(batch as f64);
    let log_delta_inv: T = real(-delta_f.ln());
    let two: T = real(2.0);

    let bound_at = |eps: T| -> T {
        let log_cover = if d == 1 {
            T::zero()
        } else {
            d_t * Float::ln(real::<T>(3.0) / eps)
        };
        l_y * l_z * Float::sqrt(two * (log_cover + log_delta_inv) / n_t) + two * l_omega * eps
    };

    let (epsilon_n, eps_used) = if d == 1 {
        // Singleton decision set: exact cover at resolution zero.
        (l_y * l_z * Float::sqrt(two * log_delta_inv / n_t), T::zero())
    } else if let Some(eps) = epsilon_cover {
        if eps <= T::zero() {
            return Err(CertificateError::BadReturnBound {
                bound: eps.to_f64().unwrap_or(f64::NAN),
            });
        }
        (bound_at(eps), eps)
    } else {
        // Log-spaced grid over (1e-6, 1]; coarse is fine, the minimum is flat.
        let mut best = (bound_at(T::one()), T::one());
        for k in 0..=60 {
            let eps: T = real(10f64.powf(-6.0 + 6.0 * k as f64 / 60.0));
            let value = bound_at(eps);
            if value < best.0 {
                best = (value, eps);
            }
        }
        best
    };

    Ok(ConstantsReport { epsilon_n, l_y, l_z, l_omega, epsilon_cover: eps_used })
}

/// One row of a perturbation-budget sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow<T> {
    pub rho: T,
    pub mu_bar: T,
    pub epsilon_n: T,
    pub regime: Regime,
}

/// Slack, deviation bound, and regime across a grid of perturbation budgets.
#[allow(clippy::too_many_arguments)]
pub fn rho_sweep<T: Scalar + RealField>(
    oracle: &GeneratorSpec<T>,
    nominal: &GeneratorSpec<T>,
    x_oracle: &[T],
    x_nominal: &[T],
    problem: &DecisionProblem<T>,
    base_cfg: &RobustConfig<T>,
    rhos: &[T],
    grid: &[Vec<T>],
    return_bound: T,
    delta: T,
    oracle_samples: usize,
    oracle_seed: u64,
) -> Result<Vec<SweepRow<T>>, CertificateError>
where
    StandardNormal: Distribution<T>,
{
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let cfg = RobustConfig { rho, ..base_cfg.clone() };
        let ball = PerturbationBall::new(nominal.theta.clone(), rho, cfg.exponent)?;
        let slack = slack_estimate(
            oracle,
            nominal,
            x_oracle,
            x_nominal,
            problem,
            &cfg,
            grid,
            oracle_samples,
            oracle_seed,
        )?;
        let constants = certificate_constants(
            nominal,
            problem,
            return_bound,
            &ball,
            None,
            delta,
            cfg.batch,
        )?;
        rows.push(SweepRow {
            rho,
            mu_bar: slack.mu_bar,
            epsilon_n: constants.epsilon_n,
            regime: classify_regime(slack.mu_bar, constants.epsilon_n),
        });
    }
    Ok(rows)
}

/// Writes a sweep as `rho,mu_bar,epsilon_n,regime`.
pub fn write_sweep_csv<T: Scalar, W: std::io::Write>(
    rows: &[SweepRow<T>],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "rho,mu_bar,epsilon_n,regime")?;
    for row in rows {
        writeln!(out, "{},{},{},{}", row.rho, row.mu_bar, row.epsilon_n, row.regime)?;
    }
    Ok(())
}

/// Per-run certificate summary, serialized to JSON by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport<T> {
    pub schema_version: u32,
    /// Empirical utility of the nominal decision at the calibrated generator.
    pub empirical_utility_nominal: T,
    /// Empirical robust criterion of the robust decision.
    pub robust_objective: T,
    /// Oracle utility of the nominal decision.
    pub oracle_utility_nominal: T,
    /// Oracle utility of the robust decision.
    pub oracle_utility_robust: T,
    pub gap_nominal: T,
    pub gap_robust: T,
    pub slack_mu_bar: T,
    pub epsilon_n: T,
    pub regime: Regime,
    pub coverage: bool,
    pub coverage_distance: T,
    pub oracle_samples: usize,
}

pub const CERTIFICATE_SCHEMA_VERSION: u32 = 1;

impl<T: Scalar> CertificateReport<T> {
    /// Internal consistency: gaps are the stated differences and the regime
    /// matches the stored slack and deviation bound.
    pub fn consistent(&self) -> bool {
        let tol: T = real(1e-12);
        let gap_n = self.empirical_utility_nominal - self.oracle_utility_nominal;
        let gap_r = self.robust_objective - self.oracle_utility_robust;
        (self.gap_nominal - gap_n).abs() <= tol
            && (self.gap_robust - gap_r).abs() <= tol
            && classify_regime(self.slack_mu_bar, self.epsilon_n) == self.regime
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{random_affine, AffineGaussianParams, GeneratorDims};

    fn problem(d: usize) -> DecisionProblem<f64> {
        DecisionProblem::new(d, 10.0).unwrap()
    }

    #[test]
    fn oracle_utility_matches_gaussian_closed_form() {
        // Affine oracle: pi ~ N(m, s^2) with m = (A x + c).w, s = ||B^T w||.
        // E[u(pi)] = m - (lambda/2)(m^2 + s^2).
        let dims = GeneratorDims::new(2, 2, 2).unwrap();
        let params = AffineGaussianParams::new(
            dims,
            vec![0.01, -0.02, 0.03, 0.005],
            vec![0.02, 0.0, 0.01, 0.015],
            vec![0.004, -0.002],
        )
        .unwrap();
        let oracle = params.flatten();
        let x = [0.5, -1.0];
        let w = [0.6, 0.4];
        let est = oracle_utility(&oracle, &x, &problem(2), &w, 200_000, 9).unwrap();

        let mean_vec = [
            0.01 * 0.5 + (-0.02) * (-1.0) + 0.004,
            0.03 * 0.5 + 0.005 * (-1.0) - 0.002,
        ];
        let m = 0.6 * mean_vec[0] + 0.4 * mean_vec[1];
        // B^T w rows: (0.02, 0.0) and (0.01, 0.015).
        let btw = [0.6 * 0.02 + 0.4 * 0.01, 0.6 * 0.0 + 0.4 * 0.015];
        let s2 = btw[0] * btw[0] + btw[1] * btw[1];
        let expected = m - 5.0 * (m * m + s2);
        assert!(
            (est.value - expected).abs() < 4.0 * est.std_error + 1e-9,
            "MC {} vs closed form {expected} (se {})",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn oracle_utility_constant_generator_is_exact() {
        let dims = GeneratorDims::new(1, 1, 2).unwrap();
        let params =
            AffineGaussianParams::new(dims, vec![0.0, 0.0], vec![0.0, 0.0], vec![0.02, -0.05])
                .unwrap();
        let oracle = params.flatten();
        let w = [0.5, 0.5];
        let est = oracle_utility(&oracle, &[0.0], &problem(2), &w, 100, 1).unwrap();
        let pi = 0.5 * 0.02 - 0.5 * 0.05;
        assert_eq!(est.value, pi - 5.0 * pi * pi);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn oracle_std_error_scales_like_sqrt_n() {
        let dims = GeneratorDims::new(1, 2, 2).unwrap();
        let oracle = random_affine::<f64>(21, dims, 0.05);
        let w = [0.5, 0.5];
        let a = oracle_utility(&oracle, &[0.3], &problem(2), &w, 20_000, 5).unwrap();
        let b = oracle_utility(&oracle, &[0.3], &problem(2), &w, 40_000, 5).unwrap();
        let ratio = a.std_error / b.std_error;
        assert!(
            (ratio - 2f64.sqrt()).abs() < 0.1 * 2f64.sqrt(),
            "se ratio {ratio} not within 10% of sqrt(2)"
        );
    }

    #[test]
    fn gaps_are_plain_differences() {
        let report = gaps(0.01, 0.007, 0.004, 0.006);
        assert!((report.gap_nominal - 0.003).abs() < 1e-15);
        assert!((report.gap_robust + 0.002).abs() < 1e-15);
    }

    #[test]
    fn grid_contains_vertices_and_extras_and_is_deterministic() {
        let extras = vec![vec![0.25, 0.25, 0.5]];
        let grid = omega_grid::<f64>(3, 8, 4, &extras).unwrap();
        assert_eq!(grid.len(), 8);
        assert_eq!(grid[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(grid[3], extras[0]);
        for w in &grid {
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|x| *x >= 0.0));
        }
        let again = omega_grid::<f64>(3, 8, 4, &extras).unwrap();
        assert_eq!(grid, again);
    }

    #[test]
    fn coverage_check_measures_distance() {
        let dims = GeneratorDims::new(2, 2, 2).unwrap();
        let nominal = random_affine::<f64>(33, dims, 0.05);
        let mut oracle = nominal.clone();
        oracle.theta[0] += 0.2;
        let ball =
            PerturbationBall::new(nominal.theta.clone(), 0.3, NormExponent::TWO).unwrap();
        let report = coverage_check(&oracle, &nominal, &ball).unwrap();
        assert!(report.covered);
        assert!((report.distance - 0.2).abs() < 1e-12);
        let tight = PerturbationBall::new(nominal.theta.clone(), 0.1, NormExponent::TWO).unwrap();
        assert!(!coverage_check(&oracle, &nominal, &tight).unwrap().covered);
    }

    #[test]
    fn coverage_check_rejects_kind_mismatch() {
        let dims = GeneratorDims::new(2, 2, 2).unwrap();
        let nominal = random_affine::<f64>(33, dims, 0.05);
        let oracle = crate::generator::random_mlp::<f64>(33, dims, 4, 0.05);
        let ball = PerturbationBall::new(nominal.theta.clone(), 0.3, NormExponent::TWO).unwrap();
        assert!(matches!(
            coverage_check(&oracle, &nominal, &ball),
            Err(CertificateError::KindMismatch { .. })
        ));
    }

    #[test]
    fn regime_thresholds() {
        assert_eq!(classify_regime(0.0, 1.0), Regime::Small);
        assert_eq!(classify_regime(-0.01, 1.0), Regime::Small);
        assert_eq!(classify_regime(0.05, 1.0), Regime::Small);
        assert_eq!(classify_regime(0.0500001, 1.0), Regime::Moderate);
        assert_eq!(classify_regime(0.999, 1.0), Regime::Moderate);
        assert_eq!(classify_regime(1.0, 1.0), Regime::Large);
    }

    #[test]
    fn constants_close_under_single_asset() {
        let dims = GeneratorDims::new(1, 1, 1).unwrap();
        let params = AffineGaussianParams::new(dims, vec![0.0], vec![0.02], vec![0.001]).unwrap();
        let nominal = params.flatten();
        let ball = PerturbationBall::new(nominal.theta.clone(), 0.3, NormExponent::TWO).unwrap();
        let report = certificate_constants(
            &nominal,
            &problem(1),
            0.1,
            &ball,
            None,
            0.05,
            100,
        )
        .unwrap();
        // Singleton cover: epsilon term vanishes exactly.
        let l_y = 1.0 + 10.0 * 0.1;
        let l_z = 0.02 + 0.3;
        let expected = l_y * l_z * (2.0 * (1.0f64 / 0.05).ln() / 100.0).sqrt();
        assert!((report.epsilon_n - expected).abs() < 1e-12);
        assert_eq!(report.epsilon_cover, 0.0);
    }

    #[test]
    fn constants_reject_non_affine() {
        let dims = GeneratorDims::new(2, 2, 2).unwrap();
        let mlp = crate::generator::random_mlp::<f64>(1, dims, 4, 0.05);
        let ball = PerturbationBall::new(mlp.theta.clone(), 0.3, NormExponent::TWO).unwrap();
        assert!(matches!(
            certificate_constants(&mlp, &problem(2), 0.1, &ball, None, 0.05, 100),
            Err(CertificateError::NonAffine)
        ));
    }

    #[test]
    fn constants_grow_with_radius() {
        let dims = GeneratorDims::new(2, 2, 2).unwrap();
        let nominal = random_affine::<f64>(3, dims, 0.05);
        let mut last = 0.0;
        for rho in [0.0, 0.1, 0.3, 0.6] {
            let ball =
                PerturbationBall::new(nominal.theta.clone(), rho, NormExponent::TWO).unwrap();
            let report =
                certificate_constants(&nominal, &problem(2), 0.1, &ball, None, 0.05, 200).unwrap();
            assert!(report.epsilon_n >= last, "epsilon_N should grow with rho");
            last = report.epsilon_n;
        }
    }

    #[test]
    fn report_consistency_detects_tampering() {
        let mut report = CertificateReport {
            schema_version: CERTIFICATE_SCHEMA_VERSION,
            empirical_utility_nominal: 0.01,
            robust_objective: 0.005,
            oracle_utility_nominal: 0.007,
            oracle_utility_robust: 0.006,
            gap_nominal: 0.003,
            gap_robust: -0.001,
            slack_mu_bar: 0.001,
            epsilon_n: 0.5,
            regime: Regime::Small,
            coverage: true,
            coverage_distance: 0.2,
            oracle_samples: 1000,
        };
        assert!(report.consistent());
        report.gap_nominal = 0.004;
        assert!(!report.consistent());
    }
}

//! Decision objective: quadratic utility of portfolio return.
//!
//! The decision maker maximizes `u(pi) = pi - (lambda/2) pi^2` where
//! `pi = y . w` is the portfolio return of weights `w` under scenario `y`.
//! The empirical objective averages `u` over a scenario batch; the adversary
//! later minimizes the same quantity over generator parameters. `u` is concave
//! in `pi` and `pi` is linear in `w`, so the empirical objective is concave on
//! the simplex and projected gradient ascent converges with a fixed step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{real, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("risk aversion must be positive, got {lambda}")]
    NonPositiveLambda { lambda: f64 },
    #[error("asset count must be at least 1")]
    NoAssets,
    #[error("scenario set is empty")]
    EmptyScenarios,
    #[error("scenario buffer length {len} is not a multiple of asset count {assets}")]
    RaggedScenarios { len: usize, assets: usize },
    #[error("weight vector length {got} does not match asset count {expected}")]
    WeightLength { expected: usize, got: usize },
    #[error("weights leave the simplex: sum deviates by {deviation}")]
    SimplexSum { deviation: f64 },
    #[error("weights leave the simplex: entry {index} is {value}")]
    NegativeWeight { index: usize, value: f64 },
}

/// Problem statement: how many assets and how risk-averse.
///
/// The orientation is fixed: utilities are maximized by the decision maker and
/// minimized by the adversary. There is no loss-minimizing mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionProblem<T> {
    pub n_assets: usize,
    pub lambda: T,
}

impl<T: Scalar> DecisionProblem<T> {
    pub fn new(n_assets: usize, lambda: T) -> Result<Self, LossError> {
        if n_assets == 0 {
            return Err(LossError::NoAssets);
        }
        if lambda <= T::zero() {
            return Err(LossError::NonPositiveLambda {
                lambda: lambda.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(DecisionProblem { n_assets, lambda })
    }

    /// Default risk aversion used throughout the experiments.
    pub fn with_default_lambda(n_assets: usize) -> Result<Self, LossError> {
        Self::new(n_assets, real(10.0))
    }
}

/// Long-only fully-invested portfolio weights.
///
/// Construction enforces the simplex up to round-off: the sum must be within
/// 1e-9 of one and entries no more negative than -1e-12; tiny negatives are
/// clamped to zero on construction so emitted weights are exactly
/// non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights<T>(Vec<T>);

impl<T: Scalar> PortfolioWeights<T> {
    pub fn new(w: Vec<T>) -> Result<Self, LossError> {
        if w.is_empty() {
            return Err(LossError::NoAssets);
        }
        let sum: T = w.iter().copied().sum();
        let deviation = (sum - T::one()).abs();
        if deviation > real(1e-9) {
            return Err(LossError::SimplexSum {
                deviation: deviation.to_f64().unwrap_or(f64::NAN),
            });
        }
        let floor: T = -real::<T>(1e-12);
        for (index, x) in w.iter().enumerate() {
            if *x < floor {
                return Err(LossError::NegativeWeight {
                    index,
                    value: x.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        let clamped = w.into_iter().map(|x| x.max(T::zero())).collect();
        Ok(PortfolioWeights(clamped))
    }

    pub fn uniform(n_assets: usize) -> Result<Self, LossError> {
        if n_assets == 0 {
            return Err(LossError::NoAssets);
        }
        let share = T::one() / real((n_assets) as f64);
        Ok(PortfolioWeights(vec![share; n_assets]))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Quadratic utility `u(pi) = pi - (lambda/2) pi^2`.
pub fn utility<T: Scalar>(pi: T, lambda: T) -> T {
    pi - lambda / real::<T>(2.0) * pi * pi
}

fn check_scenarios<T: Scalar>(scenarios: &[T], w: &[T]) -> Result<usize, LossError> {
    let d = w.len();
    if d == 0 {
        return Err(LossError::NoAssets);
    }
    if scenarios.is_empty() {
        return Err(LossError::EmptyScenarios);
    }
    if scenarios.len() % d != 0 {
        return Err(LossError::RaggedScenarios { len: scenarios.len(), assets: d });
    }
    Ok(scenarios.len() / d)
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Mean utility over a row-major scenario buffer (`n` rows of `w.len()` assets).
pub fn empirical_utility<T: Scalar>(w: &[T], scenarios: &[T], lambda: T) -> Result<T, LossError> {
    let n = check_scenarios(scenarios, w)?;
    let d = w.len();
    let mut total = T::zero();
    for i in 0..n {
        let pi = dot(w, &scenarios[i * d..(i + 1) * d]);
        total += utility(pi, lambda);
    }
    Ok(total / real(n as f64))
}

/// Gradient of the empirical utility in the weights:
/// `(1/n) sum_i (1 - lambda pi_i) y_i`.
pub fn grad_weights<T: Scalar>(w: &[T], scenarios: &[T], lambda: T) -> Result<Vec<T>, LossError> {
    let mut out = vec![T::zero(); w.len()];
    grad_weights_into(w, scenarios, lambda, &mut out)?;
    Ok(out)
}

/// Allocation-free form of [`grad_weights`] for the solver inner loops.
pub fn grad_weights_into<T: Scalar>(
    w: &[T],
    scenarios: &[T],
    lambda: T,
    out: &mut [T],
) -> Result<(), LossError> {
    let n = check_scenarios(scenarios, w)?;
    let d = w.len();
    if out.len() != d {
        return Err(LossError::WeightLength { expected: d, got: out.len() });
    }
    out.iter_mut().for_each(|x| *x = T::zero());
    let inv_n = real::<T>(1.0 / n as f64);
    for i in 0..n {
        let row = &scenarios[i * d..(i + 1) * d];
        let pi = dot(w, row);
        let coeff = (T::one() - lambda * pi) * inv_n;
        for (o, y) in out.iter_mut().zip(row) {
            *o += coeff * *y;
        }
    }
    Ok(())
}

/// Gradient of `u(y . w)` in the scenario `y`: `(1 - lambda y.w) w`.
///
/// This is the upstream vector fed to the generator's parameter
/// vector-Jacobian product.
pub fn grad_scenario<T: Scalar>(w: &[T], y: &[T], lambda: T) -> Result<Vec<T>, LossError> {
    if y.len() != w.len() {
        return Err(LossError::WeightLength { expected: w.len(), got: y.len() });
    }
    let coeff = T::one() - lambda * dot(w, y);
    Ok(w.iter().map(|x| coeff * *x).collect())
}

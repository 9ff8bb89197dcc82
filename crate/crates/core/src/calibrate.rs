//! Least-squares calibration of the affine-Gaussian generator.
//!
//! Given context/target pairs, fits `y = A xbar + c + noise` by ordinary
//! least squares (one shared design, all assets jointly) and sets `B` to a
//! factor of the residual covariance, so `B z` with standard-normal `z`
//! reproduces the residual second moments. The calibrated generator has
//! latent dimension equal to the asset count.

use nalgebra::{Cholesky, DMatrix, RealField, SymmetricEigen};
use num_traits::Float;
use thiserror::Error;

use crate::generator::{AffineGaussianParams, GeneratorDims, GeneratorError, GeneratorSpec};
use crate::scalar::{real, Scalar};

/// Ridge penalty applied when the normal equations are rank deficient.
pub const RIDGE_PENALTY: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("need at least {required} rows to calibrate, got {rows}")]
    InsufficientRows { rows: usize, required: usize },
    #[error("targets buffer length {len} is not a multiple of asset count {assets}")]
    RaggedTargets { len: usize, assets: usize },
    #[error("contexts buffer has {got} entries, expected {expected}")]
    ContextLength { expected: usize, got: usize },
    #[error("dimension {axis} must be at least 1")]
    ZeroDim { axis: &'static str },
    #[error("design matrix is singular even after ridge regularization")]
    SingularDesign,
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Diagnostics emitted alongside the calibrated generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CalibrationMeta<T> {
    /// Number of training pairs used.
    pub rows: usize,
    /// Whether the normal equations needed the ridge fallback.
    pub ridge_used: bool,
    /// Penalty applied when `ridge_used` (zero otherwise).
    pub ridge_penalty: f64,
    /// Whether the covariance factor came from the eigen fallback instead of
    /// a plain Cholesky factorization (rank-deficient residual covariance).
    pub eigen_factor: bool,
    /// Per-asset residual variance, the diagonal of the residual covariance.
    pub residual_variance: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult<T> {
    pub spec: GeneratorSpec<T>,
    pub meta: CalibrationMeta<T>,
}

/// Fits the affine family to `rows` pairs of flattened context (`context_dim`
/// entries each) and next-period returns (`n_assets` entries each).
///
/// Requires `rows >= context_dim + n_assets + 10` so both the regression and
/// the covariance estimate are overdetermined.
pub fn calibrate_affine<T: Scalar + RealField>(
    contexts: &[T],
    targets: &[T],
    context_dim: usize,
    n_assets: usize,
) -> Result<CalibrationResult<T>, CalibrateError> {
    if context_dim == 0 {
        return Err(CalibrateError::ZeroDim { axis: "context" });
    }
    if n_assets == 0 {
        return Err(CalibrateError::ZeroDim { axis: "output" });
    }
    if targets.len() % n_assets != 0 {
        return Err(CalibrateError::RaggedTargets { len: targets.len(), assets: n_assets });
    }
    let rows = targets.len() / n_assets;
    let required = context_dim + n_assets + 10;
    if rows < required {
        return Err(CalibrateError::InsufficientRows { rows, required });
    }
    if contexts.len() != rows * context_dim {
        return Err(CalibrateError::ContextLength {
            expected: rows * context_dim,
            got: contexts.len(),
        });
    }

    let f = context_dim;
    let d = n_assets;
    // Design with intercept in the last column.
    let design = DMatrix::<T>::from_fn(rows, f + 1, |r, col| {
        if col < f {
            contexts[r * f + col]
        } else {
            T::one()
        }
    });
    let response = DMatrix::<T>::from_fn(rows, d, |r, i| targets[r * d + i]);

    let design_t = design.transpose();
    let gram = &design_t * &design;
    let rhs = &design_t * &response;

    // Cholesky can "succeed" on an exactly singular Gram through rounding
    // noise in the last pivot; a pivot ratio below 1e-6 (Gram condition
    // beyond ~1e12) is numerically rank deficient all the same.
    let well_conditioned = |chol: &Cholesky<T, nalgebra::Dyn>| {
        let l = chol.l_dirty();
        let mut lo = <T as Float>::max_value();
        let mut hi = T::zero();
        for i in 0..f + 1 {
            let pivot = l[(i, i)];
            if pivot < lo {
                lo = pivot;
            }
            if pivot > hi {
                hi = pivot;
            }
        }
        lo > hi * real(1e-6)
    };
    let mut ridge_used = false;
    let solve = match Cholesky::new(gram.clone()).filter(well_conditioned) {
        Some(chol) => chol,
        None => {
            ridge_used = true;
            let penalty: T = real(RIDGE_PENALTY);
            let mut ridged = gram;
            for i in 0..f + 1 {
                ridged[(i, i)] += penalty;
            }
            Cholesky::new(ridged).ok_or(CalibrateError::SingularDesign)?
        }
    };
    let coeffs = solve.solve(&rhs); // (f+1) x d

    let mut a = vec![T::zero(); d * f];
    let mut c = vec![T::zero(); d];
    for i in 0..d {
        for j in 0..f {
            a[i * f + j] = coeffs[(j, i)];
        }
        c[i] = coeffs[(f, i)];
    }

    let residuals = &response - &design * &coeffs;
    let inv_n: T = real(1.0 / rows as f64);
    let sigma = (residuals.transpose() * &residuals).map(|v| v * inv_n);
    let residual_variance: Vec<T> = (0..d).map(|i| sigma[(i, i)]).collect();

    // Factor the residual covariance: Cholesky when positive definite,
    // symmetric eigen square root otherwise (covers singular and exactly-zero
    // covariances, where B collapses toward zero).
    let mut eigen_factor = false;
    let b_matrix = match Cholesky::new(sigma.clone()) {
        Some(chol) => chol.l(),
        None => {
            eigen_factor = true;
            let eigen = SymmetricEigen::new(sigma);
            let roots: Vec<T> = eigen
                .eigenvalues
                .iter()
                .map(|lam| Float::sqrt(Float::max(*lam, T::zero())))
                .collect();
            let mut m = eigen.eigenvectors;
            for (col, root) in roots.iter().enumerate() {
                for row in 0..d {
                    m[(row, col)] *= *root;
                }
            }
            m
        }
    };
    let mut b = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            b[i * d + j] = b_matrix[(i, j)];
        }
    }

    let dims = GeneratorDims::new(f, d, d)?;
    let spec = AffineGaussianParams::new(dims, a, b, c)?.flatten();
    Ok(CalibrationResult {
        spec,
        meta: CalibrationMeta {
            rows,
            ridge_used,
            ridge_penalty: if ridge_used { RIDGE_PENALTY } else { 0.0 },
            eigen_factor,
            residual_variance,
        },
    })
}

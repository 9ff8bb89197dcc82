//! Sampler-robust portfolio optimization.
//!
//! A calibrated scenario generator is never the true market: it sits at some
//! unknown distance from the data-generating process. This crate optimizes
//! portfolio decisions against the worst generator inside a norm ball around
//! the calibrated parameters, so decisions degrade gracefully when the
//! calibration is off.
//!
//! The pieces:
//!
//! - [`generator`]: affine-Gaussian and tanh-MLP scenario models with exact
//!   parameter VJPs and a fixed flat parameter layout.
//! - [`calibrate`]: least-squares fitting of the affine family to a return
//!   panel.
//! - [`loss`]: quadratic utility of portfolio return and its gradients.
//! - [`geometry`]: simplex projection, norm-ball projection, and the
//!   closed-form dual-norm adversary step.
//! - [`solver`]: nominal projected ascent plus two robust solvers (dual-step
//!   first-order and two-timescale ascent-descent), all sharing one
//!   deterministic decision loop.
//! - [`certificate`]: oracle-utility estimation, generalization gaps, slack
//!   and regime classification, and the finite-sample reliability bound.
//!
//! All numeric kernels are generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the `*64` aliases below pin the double-precision instantiations used by the
//! experiment harness.

pub mod calibrate;
pub mod certificate;
pub mod generator;
pub mod geometry;
pub mod loss;
pub mod scalar;
pub mod solver;

pub use generator::{GeneratorDims, GeneratorKind, GeneratorSpec, LatentBatch};
pub use geometry::{NormExponent, PerturbationBall};
pub use loss::{DecisionProblem, PortfolioWeights};
pub use scalar::Scalar;
pub use solver::{RobustConfig, SolveTrace};

/// Double-precision generator, as used by the harness.
pub type GeneratorSpec64 = generator::GeneratorSpec<f64>;
/// Double-precision latent batch.
pub type LatentBatch64 = generator::LatentBatch<f64>;
/// Double-precision perturbation ball.
pub type PerturbationBall64 = geometry::PerturbationBall<f64>;
/// Double-precision decision problem.
pub type DecisionProblem64 = loss::DecisionProblem<f64>;
/// Double-precision portfolio weights.
pub type PortfolioWeights64 = loss::PortfolioWeights<f64>;
/// Double-precision solver configuration.
pub type RobustConfig64 = solver::RobustConfig<f64>;
/// Double-precision solve trace.
pub type SolveTrace64 = solver::SolveTrace<f64>;
/// Double-precision certificate report.
pub type CertificateReport64 = certificate::CertificateReport<f64>;

//! Experiment harness around `sro-core`: return panels, preprocessing,
//! performance metrics, calibration screening, controlled studies with a
//! known oracle sampler, and real-data backtests.
//!
//! Everything here is deterministic given the config and its seeds: panels
//! and reports round-trip through their file formats bitwise, and running
//! the same study twice produces byte-identical artifacts.

pub mod backtest;
pub mod controlled;
pub mod experiment;
pub mod metrics;
pub mod panel;
pub mod preprocess;
pub mod report;
pub mod screen;
pub mod synth;

pub use backtest::run_backtest;
pub use controlled::run_controlled;
pub use experiment::{ExperimentConfig, ExperimentError, Mode, SolverChoice};
pub use metrics::{summarize, SummaryMetrics};
pub use panel::{emit_csv, ingest_csv, ReturnPanel};
pub use preprocess::{make_context, preprocess, realized_return, Standardization};
pub use report::{verify_aggregates, write_study, StudyResult};

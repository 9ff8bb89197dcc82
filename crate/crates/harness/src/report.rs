//! Study outputs: per-day returns, per-seed metrics, certificates, and
//! cross-seed aggregates.
//!
//! Everything is written with the shortest float representation that parses
//! back to the same bits, so aggregates can be recomputed exactly from the
//! emitted per-seed rows — `verify_aggregates` checks that round trip.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sro_core::certificate::CertificateReport;
use thiserror::Error;

use crate::metrics::{summarize, MetricsError, SummaryMetrics};
use crate::screen::ScreenDiagnostics;

pub const STUDY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{file} line {line}: {message}")]
    Malformed { file: String, line: usize, message: String },
    #[error("aggregate mismatch for {method}/{metric}: stored {stored}, recomputed {recomputed}")]
    AggregateMismatch { method: Method, metric: String, stored: f64, recomputed: f64 },
    #[error("aggregate file has {stored} rows, recomputation gives {recomputed}")]
    AggregateShape { stored: usize, recomputed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nominal,
    Sro,
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Nominal => write!(f, "nominal"),
            Method::Sro => write!(f, "sro"),
            Method::Oracle => write!(f, "oracle"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nominal" => Ok(Method::Nominal),
            "sro" => Ok(Method::Sro),
            "oracle" => Ok(Method::Oracle),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// Daily series of one decision method within one seed's run.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSeries {
    pub method: Method,
    /// Realized net portfolio return per decision day.
    pub returns: Vec<f64>,
    /// In-model value minus oracle value per decision day; empty when no
    /// oracle exists (real-data backtests).
    pub gaps: Vec<f64>,
}

/// Everything produced for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    /// Exclusion reason when the validity screen failed; excluded runs carry
    /// no series or certificate.
    pub excluded: Option<String>,
    /// Perturbation budget selected on validation days.
    pub rho: Option<f64>,
    /// Decision-day row indices (shared by all series).
    pub days: Vec<usize>,
    pub series: Vec<MethodSeries>,
    pub screen: ScreenDiagnostics,
    pub certificate: Option<CertificateReport<f64>>,
}

impl SeedRun {
    pub fn is_included(&self) -> bool {
        self.excluded.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub runs: Vec<SeedRun>,
}

impl StudyResult {
    pub fn included(&self) -> usize {
        self.runs.iter().filter(|r| r.is_included()).count()
    }
}

/// One line of `per_seed_metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSeedRow {
    pub seed: u64,
    pub method: Method,
    pub metrics: SummaryMetrics,
    /// Mean daily generalization gap; `None` without an oracle.
    pub gap_mean: Option<f64>,
}

/// One line of `aggregate.csv`: mean and sample standard deviation of one
/// per-seed statistic across the seeds where it exists.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

pub fn per_seed_rows(study: &StudyResult) -> Result<Vec<PerSeedRow>, ReportError> {
    let mut rows = Vec::new();
    for run in study.runs.iter().filter(|r| r.is_included()) {
        for series in &run.series {
            let metrics = summarize(&series.returns)?;
            let gap_mean = if series.gaps.is_empty() {
                None
            } else {
                Some(series.gaps.iter().sum::<f64>() / series.gaps.len() as f64)
            };
            rows.push(PerSeedRow { seed: run.seed, method: series.method, metrics, gap_mean });
        }
    }
    Ok(rows)
}

const METRIC_NAMES: [&str; 6] =
    ["mean_return", "std_return", "sharpe", "cvar5", "max_drawdown", "gap_mean"];

fn metric_value(row: &PerSeedRow, metric: &str) -> Option<f64> {
    match metric {
        "mean_return" => Some(row.metrics.mean),
        "std_return" => Some(row.metrics.std),
        "sharpe" => row.metrics.sharpe,
        "cvar5" => Some(row.metrics.cvar5),
        "max_drawdown" => Some(row.metrics.max_drawdown),
        "gap_mean" => row.gap_mean,
        other => unreachable!("unknown metric {other}"),
    }
}

/// Cross-seed mean and sample std per (method, metric). Metrics absent for a
/// seed (missing Sharpe, no oracle gap) are skipped; a metric absent for all
/// seeds produces no row. A single seed reports a std of zero.
pub fn aggregate(rows: &[PerSeedRow]) -> Vec<AggregateRow> {
    let mut methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
    methods.sort_unstable();
    methods.dedup();

    let mut out = Vec::new();
    for method in methods {
        for metric in METRIC_NAMES {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method)
                .filter_map(|r| metric_value(r, metric))
                .collect();
            if values.is_empty() {
                continue;
            }
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0))
                    .sqrt()
            } else {
                0.0
            };
            out.push(AggregateRow { method, metric: metric.to_owned(), mean, std, seeds: n });
        }
    }
    out
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_daily_returns_csv<W: Write>(study: &StudyResult, mut out: W) -> std::io::Result<()> {
    writeln!(out, "seed,t,method,return,gap")?;
    for run in study.runs.iter().filter(|r| r.is_included()) {
        for (i, &day) in run.days.iter().enumerate() {
            for series in &run.series {
                let gap = series.gaps.get(i).copied();
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    run.seed,
                    day,
                    series.method,
                    series.returns[i],
                    fmt_opt(gap)
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_per_seed_csv<W: Write>(rows: &[PerSeedRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "seed,method,mean_return,std_return,sharpe,cvar5,max_drawdown,gap_mean")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.seed,
            row.method,
            row.metrics.mean,
            row.metrics.std,
            fmt_opt(row.metrics.sharpe),
            row.metrics.cvar5,
            row.metrics.max_drawdown,
            fmt_opt(row.gap_mean)
        )?;
    }
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "method,metric,mean,std,seeds")?;
    for row in rows {
        writeln!(out, "{},{},{},{},{}", row.method, row.metric, row.mean, row.std, row.seeds)?;
    }
    Ok(())
}

/// Per-seed certificate and screen record, including excluded seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateEntry {
    pub seed: u64,
    pub excluded: Option<String>,
    pub rho: Option<f64>,
    pub screen: ScreenDiagnostics,
    pub certificate: Option<CertificateReport<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificatesFile {
    pub schema_version: u32,
    pub runs: Vec<CertificateEntry>,
}

pub fn certificates_file(study: &StudyResult) -> CertificatesFile {
    CertificatesFile {
        schema_version: STUDY_SCHEMA_VERSION,
        runs: study
            .runs
            .iter()
            .map(|run| CertificateEntry {
                seed: run.seed,
                excluded: run.excluded.clone(),
                rho: run.rho,
                screen: run.screen.clone(),
                certificate: run.certificate.clone(),
            })
            .collect(),
    }
}

/// Writes the four study artifacts into `dir`:
/// `daily_returns.csv`, `per_seed_metrics.csv`, `aggregate.csv`,
/// `certificates.json`.
pub fn write_study(dir: &Path, study: &StudyResult) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    let rows = per_seed_rows(study)?;

    let mut daily = Vec::new();
    write_daily_returns_csv(study, &mut daily)?;
    fs::write(dir.join("daily_returns.csv"), daily)?;

    let mut per_seed = Vec::new();
    write_per_seed_csv(&rows, &mut per_seed)?;
    fs::write(dir.join("per_seed_metrics.csv"), per_seed)?;

    let mut agg = Vec::new();
    write_aggregate_csv(&aggregate(&rows), &mut agg)?;
    fs::write(dir.join("aggregate.csv"), agg)?;

    let json = serde_json::to_string_pretty(&certificates_file(study))?;
    fs::write(dir.join("certificates.json"), json)?;
    Ok(())
}

fn parse_cell(file: &str, line: usize, cell: &str, what: &str) -> Result<f64, ReportError> {
    cell.parse().map_err(|_| ReportError::Malformed {
        file: file.to_owned(),
        line,
        message: format!("cannot parse {what} {cell:?}"),
    })
}

fn parse_opt_cell(
    file: &str,
    line: usize,
    cell: &str,
    what: &str,
) -> Result<Option<f64>, ReportError> {
    if cell.is_empty() {
        Ok(None)
    } else {
        parse_cell(file, line, cell, what).map(Some)
    }
}

pub fn read_per_seed_csv(path: &Path) -> Result<Vec<PerSeedRow>, ReportError> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header))
            if header == "seed,method,mean_return,std_return,sharpe,cvar5,max_drawdown,gap_mean" => {}
        other => {
            return Err(ReportError::Malformed {
                file,
                line: 1,
                message: format!("unexpected header {:?}", other.map(|(_, h)| h)),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, text_line) in lines {
        let line = idx + 1;
        let cells: Vec<&str> = text_line.split(',').collect();
        if cells.len() != 8 {
            return Err(ReportError::Malformed {
                file,
                line,
                message: format!("expected 8 cells, found {}", cells.len()),
            });
        }
        let seed = cells[0].parse().map_err(|_| ReportError::Malformed {
            file: file.clone(),
            line,
            message: format!("cannot parse seed {:?}", cells[0]),
        })?;
        let method = cells[1].parse().map_err(|message| ReportError::Malformed {
            file: file.clone(),
            line,
            message,
        })?;
        rows.push(PerSeedRow {
            seed,
            method,
            metrics: SummaryMetrics {
                mean: parse_cell(&file, line, cells[2], "mean_return")?,
                std: parse_cell(&file, line, cells[3], "std_return")?,
                sharpe: parse_opt_cell(&file, line, cells[4], "sharpe")?,
                cvar5: parse_cell(&file, line, cells[5], "cvar5")?,
                max_drawdown: parse_cell(&file, line, cells[6], "max_drawdown")?,
            },
            gap_mean: parse_opt_cell(&file, line, cells[7], "gap_mean")?,
        });
    }
    Ok(rows)
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>, ReportError> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == "method,metric,mean,std,seeds" => {}
        other => {
            return Err(ReportError::Malformed {
                file,
                line: 1,
                message: format!("unexpected header {:?}", other.map(|(_, h)| h)),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, text_line) in lines {
        let line = idx + 1;
        let cells: Vec<&str> = text_line.split(',').collect();
        if cells.len() != 5 {
            return Err(ReportError::Malformed {
                file,
                line,
                message: format!("expected 5 cells, found {}", cells.len()),
            });
        }
        let method = cells[0].parse().map_err(|message| ReportError::Malformed {
            file: file.clone(),
            line,
            message,
        })?;
        let seeds = cells[4].parse().map_err(|_| ReportError::Malformed {
            file: file.clone(),
            line,
            message: format!("cannot parse seed count {:?}", cells[4]),
        })?;
        rows.push(AggregateRow {
            method,
            metric: cells[1].to_owned(),
            mean: parse_cell(&file, line, cells[2], "mean")?,
            std: parse_cell(&file, line, cells[3], "std")?,
            seeds,
        });
    }
    Ok(rows)
}

/// Recomputes `aggregate.csv` from `per_seed_metrics.csv` in `dir` and
/// compares within `tol`; returns the recomputed rows on success.
pub fn verify_aggregates(dir: &Path, tol: f64) -> Result<Vec<AggregateRow>, ReportError> {
    let per_seed = read_per_seed_csv(&dir.join("per_seed_metrics.csv"))?;
    let stored = read_aggregate_csv(&dir.join("aggregate.csv"))?;
    let recomputed = aggregate(&per_seed);
    if stored.len() != recomputed.len() {
        return Err(ReportError::AggregateShape {
            stored: stored.len(),
            recomputed: recomputed.len(),
        });
    }
    for (s, r) in stored.iter().zip(&recomputed) {
        if s.method != r.method || s.metric != r.metric || s.seeds != r.seeds {
            return Err(ReportError::AggregateShape {
                stored: stored.len(),
                recomputed: recomputed.len(),
            });
        }
        if (s.mean - r.mean).abs() > tol || (s.std - r.std).abs() > tol {
            let (stored_v, recomputed_v) = if (s.mean - r.mean).abs() > tol {
                (s.mean, r.mean)
            } else {
                (s.std, r.std)
            };
            return Err(ReportError::AggregateMismatch {
                method: s.method,
                metric: s.metric.clone(),
                stored: stored_v,
                recomputed: recomputed_v,
            });
        }
    }
    Ok(recomputed)
}

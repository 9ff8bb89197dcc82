//! Return-panel ingestion and emission.
//!
//! The on-disk format is a plain CSV: header `date,<ticker>,...`, one row per
//! trading day, cells holding decimal log returns. Ingestion is strict — any
//! blank or non-numeric cell, duplicate date, or out-of-order date rejects
//! the file with the offending line number.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("panel file has no header row")]
    MissingHeader,
    #[error("header must start with a date column followed by at least one ticker")]
    NoTickers,
    #[error("line {line}: expected {expected} cells, found {got}")]
    RaggedRow { line: usize, expected: usize, got: usize },
    #[error("line {line}, column {column}: blank cell")]
    BlankCell { line: usize, column: String },
    #[error("line {line}, column {column}: cannot parse {text:?} as a return")]
    NonNumeric { line: usize, column: String, text: String },
    #[error("line {line}, column {column}: non-finite return")]
    NonFinite { line: usize, column: String },
    #[error("line {line}: cannot parse date {text:?} (expected YYYY-MM-DD)")]
    BadDate { line: usize, text: String },
    #[error("line {line}: duplicate date {date}")]
    DuplicateDate { line: usize, date: NaiveDate },
    #[error("line {line}: date {date} is not after the previous row")]
    NonMonotoneDate { line: usize, date: NaiveDate },
    #[error("panel has {rows} rows, need at least {required} for lookback {lookback}")]
    TooShort { rows: usize, required: usize, lookback: usize },
    #[error("panel is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Daily log returns for a fixed ticker set: `returns` is row-major `T x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub returns: Vec<f64>,
}

impl ReturnPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        returns: Vec<f64>,
    ) -> Result<Self, PanelError> {
        if dates.is_empty() || tickers.is_empty() {
            return Err(PanelError::Empty);
        }
        assert_eq!(returns.len(), dates.len() * tickers.len(), "ragged return buffer");
        Ok(ReturnPanel { dates, tickers, returns })
    }

    pub fn rows(&self) -> usize {
        self.dates.len()
    }

    pub fn assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.assets();
        &self.returns[t * d..(t + 1) * d]
    }

    /// First `n` rows as a new panel.
    pub fn head_rows(&self, n: usize) -> ReturnPanel {
        assert!(n > 0 && n <= self.rows(), "head_rows out of range");
        ReturnPanel {
            dates: self.dates[..n].to_vec(),
            tickers: self.tickers.clone(),
            returns: self.returns[..n * self.assets()].to_vec(),
        }
    }

    /// Column-restricted copy (used for seeded ticker subsets).
    pub fn select_columns(&self, indices: &[usize]) -> ReturnPanel {
        let d = self.assets();
        let mut returns = Vec::with_capacity(self.rows() * indices.len());
        for t in 0..self.rows() {
            for &j in indices {
                assert!(j < d, "column index out of range");
                returns.push(self.returns[t * d + j]);
            }
        }
        ReturnPanel {
            dates: self.dates.clone(),
            tickers: indices.iter().map(|&j| self.tickers[j].clone()).collect(),
            returns,
        }
    }

    /// A decision at time `t` needs `lookback` prior rows plus a realized
    /// next row, so anything shorter than `lookback + 2` can never be used.
    pub fn validate_for(&self, lookback: usize) -> Result<(), PanelError> {
        let required = lookback + 2;
        if self.rows() < required {
            return Err(PanelError::TooShort { rows: self.rows(), required, lookback });
        }
        Ok(())
    }
}

pub fn ingest_csv(path: &Path) -> Result<ReturnPanel, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(PanelError::MissingHeader);
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if tickers.is_empty() {
        return Err(PanelError::NoTickers);
    }
    let d = tickers.len();

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut returns: Vec<f64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        // Header is line 1, the first data row line 2.
        let line = idx + 2;
        if record.len() != d + 1 {
            return Err(PanelError::RaggedRow { line, expected: d + 1, got: record.len() });
        }
        let date_text = &record[0];
        if date_text.is_empty() {
            return Err(PanelError::BlankCell { line, column: "date".into() });
        }
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d")
            .map_err(|_| PanelError::BadDate { line, text: date_text.to_owned() })?;
        if let Some(last) = dates.last() {
            if date == *last {
                return Err(PanelError::DuplicateDate { line, date });
            }
            if date < *last {
                return Err(PanelError::NonMonotoneDate { line, date });
            }
        }
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                return Err(PanelError::BlankCell { line, column: tickers[j].clone() });
            }
            let value: f64 = cell.parse().map_err(|_| PanelError::NonNumeric {
                line,
                column: tickers[j].clone(),
                text: cell.to_owned(),
            })?;
            if !value.is_finite() {
                return Err(PanelError::NonFinite { line, column: tickers[j].clone() });
            }
            returns.push(value);
        }
        dates.push(date);
    }
    if dates.is_empty() {
        return Err(PanelError::Empty);
    }
    ReturnPanel::new(dates, tickers, returns)
}

/// Writes the panel in the same format `ingest_csv` reads. Floats use the
/// shortest representation that round-trips, so emit-then-ingest is exact.
pub fn emit_csv<W: Write>(panel: &ReturnPanel, mut out: W) -> std::io::Result<()> {
    write!(out, "date")?;
    for ticker in &panel.tickers {
        write!(out, ",{ticker}")?;
    }
    writeln!(out)?;
    for (t, date) in panel.dates.iter().enumerate() {
        write!(out, "{}", date.format("%Y-%m-%d"))?;
        for value in panel.row(t) {
            write!(out, ",{value}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

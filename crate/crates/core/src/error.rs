use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: unexpected header {found:?}, expected {expected:?}")]
    Header {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("no records")]
    NoRecords,

    #[error("all {0} records are unmatched")]
    AllUnmatched(usize),

    #[error("negative count at line {line}")]
    NegativeCount { line: u64 },

    #[error("duplicate cell ({poi}, {date}) at line {line}")]
    DuplicateCell {
        poi: String,
        date: NaiveDate,
        line: u64,
    },

    #[error("traffic panel has {} missing (poi, day) cells: {}", .0.len(), preview_gaps(.0))]
    MissingCells(Vec<(String, NaiveDate)>),

    #[error("ambiguous precinct {0}: mapped to more than one location")]
    AmbiguousPrecinct(String),

    #[error("insufficient adjacent days for {day}: missing {missing:?}")]
    InsufficientWindow {
        day: NaiveDate,
        missing: Vec<NaiveDate>,
    },

    #[error("day {day}: {message}")]
    DayFailed { day: NaiveDate, message: String },

    #[error("degenerate vector: {0}")]
    Degenerate(String),

    #[error("collinear design: {0}")]
    Collinear(String),

    #[error("non-positive denominator for POI {poi}: {value}")]
    NonPositiveDenominator { poi: String, value: f64 },

    #[error("statistic failed on resample {resample}: {message}")]
    ResampleFailed { resample: usize, message: String },

    #[error("capture model saturated: {fraction:.3} of POIs exceed capture rate 1")]
    CaptureSaturated { fraction: f64 },
}

fn preview_gaps(gaps: &[(String, NaiveDate)]) -> String {
    let shown: Vec<String> = gaps
        .iter()
        .take(10)
        .map(|(p, d)| format!("({p}, {d})"))
        .collect();
    let mut out = shown.join(", ");
    if gaps.len() > 10 {
        out.push_str(", ...");
    }
    out
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Json(_) => ErrorKind::Io,
            Error::Degenerate(_)
            | Error::Collinear(_)
            | Error::ResampleFailed { .. }
            | Error::CaptureSaturated { .. } => ErrorKind::Numerical,
            Error::DayFailed { message, .. }
                if message.contains("collinear") || message.contains("degenerate") =>
            {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

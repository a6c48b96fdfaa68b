use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::SourceId;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: malformed row at line {line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: duplicate year {year} at line {line}")]
    DuplicateYear {
        path: PathBuf,
        year: i32,
        line: usize,
    },
    #[error("{0}: file contains no data rows")]
    EmptyFile(PathBuf),
    #[error("operation requires a {expected:?} series, got {actual:?}")]
    WrongSource { expected: SourceId, actual: SourceId },
    #[error("negative value {0} where a non-negative one is required")]
    NegativeValue(f64),
    #[error("year {year} lies outside the window {start}..={end}")]
    YearOutOfWindow { year: i32, start: i32, end: i32 },
    #[error("{what}: two observations map to index {index}")]
    IndexCollision { what: String, index: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quantiles are not available for the {0} family")]
    Unsupported(&'static str),
    #[error("no parameters reproduce the requested quantiles: {0}")]
    NoSolution(String),
    #[error("non-finite value: {0}")]
    NonFiniteValue(String),
    #[error("matrix is not positive definite (leading minor {0})")]
    NotPositiveDefinite(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("every transition diverged in chain {0}")]
    AllDivergent(usize),
    #[error("too few draws for diagnostics: {chains} chains x {iterations} iterations")]
    TooFewDraws { chains: usize, iterations: usize },
    #[error("degenerate quartile triple {0:?}")]
    DegenerateTriple([f64; 3]),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("logistic fit did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    NonConvergence { grad_norm: f64, iterations: usize },
    #[error("population missing for year {0}")]
    MissingPopulation(i32),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("need ≥2 runs, got {0}")]
    NotEnoughRuns(usize),

    #[error("need ≥{needed} examples, got {got}")]
    NotEnoughExamples { needed: usize, got: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("example {example} is invalid: logit coordinate {coordinate} has zero variance across runs")]
    ZeroVarianceLogit { example: usize, coordinate: usize },

    #[error("series has zero variance: {0}")]
    ZeroVariance(String),

    #[error("bad magic: expected \"RVAR\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported RVAR version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated: {0}")]
    Truncated(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("{0} section required")]
    MissingSection(&'static str),

    #[error("csv {path}: line {line}: {msg}")]
    Csv {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("world spec line {line}: {msg}")]
    WorldSpec { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::NotEnoughRuns(_) => "not-enough-runs",
            Error::NotEnoughExamples { .. } => "not-enough-examples",
            Error::OutOfRange(_) => "out-of-range",
            Error::ZeroVarianceLogit { .. } => "invalid-example",
            Error::ZeroVariance(_) => "zero-variance",
            Error::BadMagic(_) => "bad-magic",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::Truncated(_) => "truncated",
            Error::InvariantViolation(_) => "invariant-violation",
            Error::MissingSection(_) => "missing-section",
            Error::Csv { .. } => "csv",
            Error::WorldSpec { .. } => "world-spec",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

//! Error taxonomy for the whole crate.
//!
//! Every failure mode the library promises to distinguish gets its own variant,
//! so callers (and the CLI exit-code mapping) can match on kind instead of
//! parsing messages.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible (e.g. weight columns vs calibration rows).
    #[error("dimension mismatch in {context}: {left} vs {right}")]
    DimensionMismatch {
        context: &'static str,
        left: String,
        right: String,
    },

    /// A matrix that must be invertible is singular (e.g. all-zero calibration
    /// data with no damping).
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Cholesky hit a non-positive pivot; reports which one.
    #[error("matrix is not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    /// A binary file did not start with the expected magic bytes.
    #[error("bad magic in {path}: expected {expected}")]
    BadMagic { path: PathBuf, expected: &'static str },

    /// A binary file ended before its header-declared payload.
    #[error("truncated payload in {path}: expected {expected} bytes after header, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    /// A CSV cell failed to parse as a number.
    #[error("non-numeric cell {cell:?} at line {line}, column {column} of {path}")]
    NonNumericCell {
        path: PathBuf,
        line: usize,
        column: usize,
        cell: String,
    },

    /// Structurally malformed CSV (ragged rows, empty file, ...).
    #[error("malformed csv in {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },

    /// A configuration value is outside its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Brute-force reference paths only run at desk scale.
    #[error("input of dimension {dim} exceeds the reference-solver limit of {max}")]
    OracleScale { dim: usize, max: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(context: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

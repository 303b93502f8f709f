//! Library error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    Rank(Vec<usize>),

    #[error("batch norm needs at least 2 values per channel in training mode, got {0}")]
    DegenerateBatch(usize),

    #[error("invalid probability {0}: expected 0 <= p < 1")]
    InvalidProbability(f64),

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot stratify into {k} folds: class {class} has only {count} members")]
    Stratification { k: usize, class: u8, count: usize },

    #[error("non-finite gradient for parameter {param} ({name})")]
    NonFiniteGradient { param: usize, name: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("score {value} at index {index} is not a finite number")]
    NonFiniteScore { index: usize, value: f64 },

    #[error("score {value} at index {index} is outside [0, 1]")]
    ScoreRange { index: usize, value: f64 },

    #[error("ROC/AUC needs at least one positive and one negative sample")]
    SingleClass,

    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found}, expected {expected}")]
    Version { expected: u32, found: u32 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("intensity {value} of sample {sample} is outside [0, 1]")]
    IntensityRange { sample: usize, value: f32 },

    #[error("{path}: line {line}: {detail}")]
    Csv {
        path: PathBuf,
        line: u64,
        detail: String,
    },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

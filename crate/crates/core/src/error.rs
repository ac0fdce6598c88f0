use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("column {column} has no observed entries")]
    EmptyColumn { column: usize },

    #[error("treatment arm {arm} is empty")]
    EmptyArm { arm: u8 },

    #[error("labels contain a single class ({0}); both 0 and 1 are required")]
    SingleClass(u8),

    #[error("logistic fit diverged (perfect separation?); use a positive ridge penalty")]
    Separation,

    #[error("design matrix is rank deficient; {0}")]
    RankDeficient(String),

    #[error("miwae bound is not finite at row {row}")]
    NonFiniteBound { row: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("all importance ratios are -inf for row {row}")]
    DegenerateWeights { row: usize },

    #[error("draw {index} failed: {source}")]
    Draw {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn draw(index: usize, source: Error) -> Self {
        Error::Draw {
            index,
            source: Box::new(source),
        }
    }
}

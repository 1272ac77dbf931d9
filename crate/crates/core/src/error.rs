use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    /// A cell could not be interpreted. `row` is 1-based and counts the header.
    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("no records")]
    NoRecords,

    #[error("duplicate visit for patient `{patient}` at month {month}")]
    DuplicateVisit { patient: String, month: u32 },

    #[error("missing month {0}")]
    MissingMonth(u32),

    #[error("patient `{patient}`: missing clinical status at month {month}")]
    MissingStatus { patient: String, month: u32 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel matrix not PD")]
    NotPositiveDefinite,

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("monotone likelihood: coefficients diverged (|beta| = {0:.3e})")]
    MonotoneLikelihood(f64),

    #[error("no events in survival data")]
    NoEvents,

    #[error("tGP undefined before first observation")]
    EmptyHistory,

    #[error("single-class training data")]
    SingleClass,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration problems map to exit code 2, everything else to 1.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TraceError>;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid spectrum: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A column whose residual fell below the rank tolerance.
    #[error("rank-deficient block: column {index} is numerically dependent on earlier columns")]
    RankDeficient { index: usize },

    #[error("singular triangular factor: diagonal entry {index} is zero")]
    SingularFactor { index: usize },

    #[error("degenerate column pair in QL step")]
    DegeneratePair,

    #[error("held-out test vector lies in the deflation space")]
    DegenerateResidual,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl TraceError {
    /// Errors caused by bad user input rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(self, TraceError::InvalidSpec(_) | TraceError::InvalidInput(_))
    }
}

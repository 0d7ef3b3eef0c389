use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unit `{unit}` has no observation for time `{time}`")]
    MissingValue { unit: String, time: String },

    #[error("duplicate observation for unit `{unit}` at time `{time}`")]
    DuplicateObservation { unit: String, time: String },

    #[error("treated unit `{0}` not found in panel")]
    UnknownTreated(String),

    #[error("intervention index {t0} must satisfy 1 <= t0 < T (T = {t_total})")]
    BadT0 { t0: usize, t_total: usize },

    #[error("unit `{unit}` lacks observations for the alignment window: {detail}")]
    InsufficientHistory { unit: String, detail: String },

    #[error("unit `{unit}`: intervention date {date} outside observed range")]
    InterventionOutOfRange { unit: String, date: String },

    #[error("normalization scale is zero or not finite")]
    DegenerateScale,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("representor Gram matrix is singular (rank {rank} of {t0}); use the pseudo-inverse path")]
    SingularPhi { rank: usize, t0: usize },

    #[error("lambda grid is empty")]
    EmptyGrid,

    #[error("pre-period of length {t0} too short for holdout fraction {holdout_fraction}")]
    TooShortPre { t0: usize, holdout_fraction: f64 },

    #[error("control matrix has no non-zero singular value")]
    DegenerateSpectrum,

    #[error("empty index range")]
    EmptyRange,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularPhi { .. }
                | Error::DegenerateSpectrum
                | Error::DegenerateScale
                | Error::Numerical(_)
        )
    }
}

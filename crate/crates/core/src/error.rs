use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid item at row {row}, field {field}: {message}")]
    InvalidItem {
        row: usize,
        field: &'static str,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-positive standard error at grid point {index} (SE = {value})")]
    NonPositiveStandardError { index: usize, value: f64 },

    #[error("exact enumeration refused: M = {m} exceeds the limit of {limit} items")]
    OracleCapacity { m: usize, limit: usize },

    #[error("insufficient density support at N = {n}, E = {e}: {detail}")]
    InsufficientSupport { n: usize, e: f64, detail: String },

    #[error("probability weights vanish everywhere on the histogram support (T = {temperature})")]
    DegenerateWeights { temperature: f64 },

    #[error("states are not adjacent: {0}")]
    NotAdjacent(String),

    #[error("missing mu = 0 row in sweep table")]
    MissingZeroPotential,

    #[error("target distance {e_goal} not reached after {stages} stages (last stage mean E = {last_mean_e})")]
    GoalUnreachable {
        e_goal: f64,
        stages: usize,
        last_mean_e: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
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

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("invalid timestamp `{0}` (expected YYMMDDHH)")]
    Timestamp(String),

    #[error("events are not sorted by hour: hour {found} follows hour {previous}")]
    Unsorted { previous: i64, found: i64 },

    #[error("hour {found} does not advance past hour {last}")]
    HourOrder { last: i64, found: i64 },

    #[error("need at least {required} distinct days, found {available}")]
    InsufficientDays { required: usize, available: usize },

    #[error("invalid window spec: {0}")]
    WindowSpec(String),

    #[error("state corruption: clicks {clicks} exceed impressions {impressions}")]
    CountInvariant { impressions: u64, clicks: u64 },

    #[error("matrix format error: {0}")]
    Format(String),

    #[error("column mismatch: {0}")]
    ColumnMismatch(String),

    #[error("row alignment error: {0}")]
    Alignment(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing result: {0}")]
    MissingResult(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use thiserror::Error;

/// Crate-wide error type. Variants group into configuration/usage problems,
/// data problems, and numeric failures; the CLI maps each group to a
/// distinct exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("too few samples: need {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("non-finite value at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("stale tape: parameters were updated after the forward pass")]
    StaleTape,

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("region mismatch: generator acceptance rate below {0}")]
    RegionMismatch(f64),

    #[error("no neighbors: Moran threshold {0} yields an empty weight matrix")]
    NoNeighbors(f64),

    #[error("no overlapping grid cells between real and synthetic data")]
    NoOverlap,

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit-code category: 2 usage/config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } => 2,
            Error::Schema(_)
            | Error::EmptyData(_)
            | Error::Data(_)
            | Error::TooFewSamples { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::DegeneratePolygon(_)
            | Error::NoOverlap
            | Error::Evaluation(_) => 3,
            Error::Shape(_)
            | Error::NonFinite { .. }
            | Error::Numeric(_)
            | Error::StaleTape
            | Error::RegionMismatch(_)
            | Error::NoNeighbors(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

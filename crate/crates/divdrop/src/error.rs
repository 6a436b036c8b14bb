use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("kernel is degenerate: {0}")]
    DegenerateKernel(String),

    #[error("sampler is degenerate: {0}")]
    DegenerateSampler(String),

    #[error("requested cardinality {k} exceeds numerical rank {rank}")]
    RankDeficient { k: usize, rank: usize },

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("training diverged: {0}")]
    DivergedTraining(String),

    #[error("ingest error at {location}: {message}")]
    IngestError { location: String, message: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid config: {0}")]
    ConfigError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

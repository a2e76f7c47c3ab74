use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("known ratio undefined: target has no known cells")]
    UndefinedRatio,
    #[error("scene generation failed: {0}")]
    GenerationFailed(String),
    #[error("no collision-free virtual path within {0} attempts")]
    PathSamplingFailed(usize),
    #[error("occlusion generation failed after {0} attempts")]
    OcclusionGenerationFailed(usize),
    #[error("numerically degenerate: {0}")]
    NumericDegenerate(String),
    #[error("metrics undefined: {0}")]
    UndefinedMetrics(String),
    #[error("plan failed: {0}")]
    PlanFailed(String),
    #[error("invalid start: {0}")]
    InvalidStart(String),
    #[error("prediction failed: {0}")]
    PredictionFailed(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

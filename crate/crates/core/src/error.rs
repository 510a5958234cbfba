use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {cause}")]
    Io { path: String, cause: std::io::Error },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: String,
        index: usize,
        limit: usize,
    },
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("weight row {row} sums to {sum} (expected 1)")]
    WeightSum { row: usize, sum: f64 },
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("point outside voxel grid: {0}")]
    OutsideGrid(String),
    #[error("distance field: {0}")]
    Field(String),
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at epoch {epoch}, rig {rig}: loss {loss}")]
    Diverged { epoch: usize, rig: String, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            cause: source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

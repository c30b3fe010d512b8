use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("probability error: {0}")]
    Probability(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("index {index} out of range for subspace of size {k}")]
    Index { index: usize, k: usize },

    #[error("label error: {0}")]
    Label(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("preprocessing model used before fit")]
    NotFitted,

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

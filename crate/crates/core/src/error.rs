use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors (or a tensor and an expected layout) disagree on shape.
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: &'static str, detail: String },

    /// A scalar argument is outside its admissible domain.
    #[error("domain error in {context}: {detail}")]
    Domain { context: &'static str, detail: String },

    /// A configuration is internally inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Dataset ingestion failed at a specific file (and line, when known).
    #[error("data error in {path}{}: {msg}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Data {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    /// A checkpoint file is truncated, malformed, or does not match the model.
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { context, detail: detail.into() }
    }

    pub(crate) fn domain(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { context, detail: detail.into() }
    }
}

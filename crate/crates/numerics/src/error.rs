use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite gradient for input {input} at coordinate {coord}")]
    NonFiniteGradient { input: usize, coord: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(NumericsError::ShapeMismatch {
        op,
        detail: detail.into(),
    })
}

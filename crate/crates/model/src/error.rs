use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] cogfuse_tensor::TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite {term} loss at step {step}")]
    NonFinite { term: &'static str, step: u64 },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(ModelError::Config(msg.into()))
}

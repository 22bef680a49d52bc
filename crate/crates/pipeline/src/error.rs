use std::path::PathBuf;

use transducer_distill_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed tensor file: {reason}")]
    TensorFormat { path: PathBuf, reason: String },
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("{path}: malformed dataset: {reason}")]
    Dataset { path: PathBuf, reason: String },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("incompatible models: {0}")]
    IncompatibleModel(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

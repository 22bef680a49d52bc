use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid label {id} at position {position} (vocabulary size {vocab})")]
    InvalidLabel {
        position: usize,
        id: usize,
        vocab: usize,
    },
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("incompatible shapes: {0}")]
    Incompatible(String),
    #[error("enumeration guard exceeded: T+U = {size} > {limit}")]
    Capacity { size: usize, limit: usize },
}

//! File formats, synthetic data, experiment orchestration and the CLI
//! around `transducer-distill-core`.

pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod metrics;
pub mod model_io;
pub mod tensor_file;
pub mod train;

pub use error::{PipelineError, Result};

//! Library side of the `fairst` command: configuration, prepared datasets
//! and the pipeline stages, so tests can drive runs without a subprocess.

pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, CliResult, ErrorKind};

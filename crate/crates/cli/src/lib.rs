//! Stage-by-stage pipeline driver for `qfuse`.

pub mod cli;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use cli::run;
pub use error::CliError;

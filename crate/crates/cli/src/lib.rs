//! Configuration-driven experiment runner for the `locsymp` networks.
//!
//! The binary wraps these modules; they are a library so integration tests
//! can parse configs and inspect outputs directly.

pub mod commands;
pub mod config;
pub mod error;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

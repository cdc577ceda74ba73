//! Batch front end: config ingestion, command dispatch, artifact emission.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run, Command, Completed, Failure};
pub use config::{parse_config, ConfigDoc};

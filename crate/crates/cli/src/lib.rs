//! Batch front end for phforge: configuration, reports and CSV output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, RunOutput};
pub use config::Overrides;

//! Driver for the `avail-bound` binary: configuration, pipelines and artifacts.

pub mod artifacts;
pub mod commands;
pub mod config;

pub use commands::{execute, resolve_threads, CliError, Command, Outcome, Verdict};
pub use config::RunConfig;

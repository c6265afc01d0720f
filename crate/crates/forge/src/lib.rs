//! Command-line front end for `spectral-forge-core`: configuration, command
//! dispatch and report emission.

pub mod commands;
pub mod config;
pub mod emit;

pub use commands::{run, RunError, RunReport, SCHEMA};
pub use config::{CommandKind, ConfigError, Overrides, RunConfig};
pub use emit::emit_report;

//! Library surface of the `redteam` binary: config parsing and the
//! subcommand implementations, exposed so integration tests can drive them
//! without spawning processes.

pub mod commands;
pub mod config;

pub use config::{parse_config, AppConfig, CliError, CliResult};

//! Configuration, orchestration and persistence for the `smps` binary.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_with, ConfigError, Overrides, RunConfig};
pub use run::{atomic_write, run, CliError, Command, RunOutcome};

/// The JSON Schema of [`RunConfig`] documents.
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../schema/run-config.schema.json");

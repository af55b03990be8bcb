//! Reproducible, configuration-driven runs: one directory per run holding CSV artifacts
//! and a manifest that echoes the fully resolved configuration.

pub mod config;
pub mod run;

pub use config::{parse_config, Command, ConfigError, RunConfig};
pub use run::{exit_code, run, RunOutcome};

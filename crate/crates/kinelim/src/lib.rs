//! Harness crate: TOML run configuration, the epsilon-sweep orchestration
//! with its limit diagnostics, and report rendering. The `kinelim` binary is
//! a thin clap wrapper over these modules.

pub mod config;
pub mod harness;
pub mod report;

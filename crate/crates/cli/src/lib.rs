//! Orchestration for the `qsm` command-line tool: run configuration,
//! snapshot files, report emission, and the verification suite.

pub mod commands;
pub mod config;
pub mod error;
pub mod snapshot;
pub mod verify;

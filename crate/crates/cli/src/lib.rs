//! Command-line orchestration: configuration files, on-disk formats and the
//! `synth`, `train`, `infer`, `eval` and `export-plots` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod plots;

pub use error::{CliError, Result};

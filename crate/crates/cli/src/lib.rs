//! Experiment runner: configuration, data files and the `synthesize`,
//! `run`, `verify` and `stats` subcommands.

// `!(x > 0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod problem;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

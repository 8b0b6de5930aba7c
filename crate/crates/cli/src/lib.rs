//! Experiment runner: configs, commands and run artifacts.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use commands::{cmd_ablate, cmd_eval, cmd_gen, cmd_report, cmd_sweep, cmd_train, SweepSpec};
pub use config::{Overrides, RunConfig};
pub use error::{exit_code, UsageError};

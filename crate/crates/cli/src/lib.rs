//! Command-line front end: dataset generation, training over a period
//! sequence, evaluation, drift inspection and figure-data export.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_detect, cmd_evaluate, cmd_export_figures, cmd_generate, cmd_train, load_periods,
};
pub use config::{RunConfig, RunSection};
pub use error::{CliError, Result};

//! Command-line front end of the `tabimpute` library.

pub mod commands;
pub mod common;
pub mod config;
pub mod error;

pub use error::{CliError, CliResult};

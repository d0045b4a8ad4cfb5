//! Command-line and HTTP front end for hybridcast.

pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod server;

pub use error::{CliError, Result};

//! Command-line front end for hard-attention continual learning experiments:
//! configuration files, run directories, report tables, compression and
//! dataset retrieval.

pub mod compress;
pub mod config;
pub mod error;
pub mod fetch;
pub mod presets;
pub mod report;
pub mod run;

pub use error::{CliError, Result};

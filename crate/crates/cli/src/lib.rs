//! Library side of the `extprof` command: run configuration, dispatch and
//! CSV / JSON output.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{main_with, run, RunError};
pub use config::{Cli, RunConfig};
pub use output::{emit_csv, emit_json, OutputRecord};

//! File formats, experiment configuration, run bookkeeping and the command
//! line around `herbnmt-core`.
//!
//! * [`io`]: corpus JSONL.
//! * [`checkpoint`]: JSON manifest plus little-endian `f32` blob.
//! * [`config`]: TOML experiment configuration with a single seed.
//! * [`manifest`]: content hashes of a run directory.
//! * [`stages`]: the pipeline stages behind each subcommand.
//! * [`cli`]: argument parsing and error reporting.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod report;
pub mod stages;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use stages::{Run, StageArgs};

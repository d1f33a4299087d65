//! File formats, configuration and the experiment harness behind the
//! `rssi-slam` binary.

pub mod config;
pub mod experiment;
pub mod io;
pub mod trace;

pub use config::{Config, Model};
pub use experiment::{run_experiment, summarize, BlockRow, ExperimentReport, RunMode};

//! Experiment harness around `tsdl-core`: IDX data files, run
//! configuration, metrics output, plots and the training runs behind the
//! `tsdl` command.

pub mod config;
pub mod experiments;
pub mod idx;
pub mod metrics;
pub mod plot;

pub use config::{Experiment, Param, RunConfig};
pub use experiments::{run, RunError, RunResult};

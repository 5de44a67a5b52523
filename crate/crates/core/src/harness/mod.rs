//! Experiment orchestration: configuration, verification suites, sweeps and
//! machine-readable reports.

pub mod config;
pub mod record;
pub mod suites;
pub mod sweep;

pub use config::{DataSpec, ExperimentConfig, DEFAULT_OUT_DIR, OUT_DIR_ENV};
pub use record::{Check, Diagnostics, RunRecord};
pub use suites::{default_config, random_instance, run_suite, suite_names, SUITES};
pub use sweep::{split_values, sweep, SweepTable};

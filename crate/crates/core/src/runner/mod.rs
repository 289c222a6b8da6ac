//! Config parsing, experiment dispatch and run records.

pub mod config;
pub mod experiments;
pub mod record;

pub use config::{parse_config, parse_config_str, ExperimentConfig, ExperimentSpec, RawConfig, KINDS};
pub use experiments::{appendix_ensembles, gradient_check, run_experiment, AppendixResult};
pub use record::{emit_summary, Assertion, Cell, Emitted, RunRecord, Table};

//! Experiment harness for the `gdqst` engine: reconstructions, benchmark
//! families and their CSV artifacts.

pub mod config;
pub mod experiment;
pub mod record;

pub use config::{ExperimentKind, ExperimentSpec, Method, Overrides};
pub use experiment::{run_experiment, ExperimentOutcome};
pub use record::BenchRecord;

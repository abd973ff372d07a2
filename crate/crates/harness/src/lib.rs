//! Coverage experiments and command-line plumbing on top of `hcope_core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod methods;
pub mod plots;

pub use config::{ExperimentConfig, FeatureChoice};
pub use error::{HarnessError, Result};
pub use experiment::{run_coverage_experiment, run_coverage_experiment_with_threads, CoverageRow};
pub use methods::{evaluate, EvalContext, Method};
pub use plots::emit_plots;

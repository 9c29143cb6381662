//! Experiment harness: configs, grid runs, verification and plots.

pub mod config;
pub mod plot;
pub mod run;
pub mod verify;

pub use config::{AlgorithmEntry, AlgorithmName, Caps, ExperimentConfig, SeedSpec};
pub use plot::{render_svg, Selector, Series};
pub use run::{compute_cpr, read_summary, run_experiment, ExperimentOutput, FailedCell, SummaryRow};
pub use verify::{verify, verify_with, CheckResult, VerifyOptions, VerifyReport};

//! Experiment runner, regret decomposition accounting, theoretical-bound
//! checkers and output emission.

pub mod bounds;
pub mod config;
pub mod plot;
pub mod runner;
pub mod trace;

pub use bounds::{fit_regret_slope, BoundReport, MartingaleStats};
pub use config::{AgentKind, EnvSpec, ExperimentConfig};
pub use runner::{execute_run, run_experiment, RunRecord, RunSpec, StepRecord};
pub use trace::{compute_decomposition, write_trace_csv, RegretTrace};

//! Experiment orchestration: configs, regret aggregation, and property grids.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod suites;

pub use config::{ExperimentConfig, SuiteConfig, PRESETS};
pub use experiment::{run_experiment, run_experiment_on, sweep_bs, ExperimentReport, DEFAULT_BATCH_SIZES};
pub use metrics::{checkpoints, mean_se, pseudo_regret_increment, RegretCurve};
pub use suites::{epic_epir_suite, monotonicity_suite, EpicMode, EpicReport, MonotonicityReport};

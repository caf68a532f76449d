//! Experiment harness over `crtre-core`: seeded grids of synthetic and
//! planted-rule experiments, long-form reports, and plain SVG charts.

pub mod config;
pub mod experiments;
pub mod planted;
pub mod report;
pub mod svg;

pub use config::{ConfigError, Experiment, ExperimentConfig, ModelName};
pub use experiments::{
    run, run_counterfactual, run_env_shift, run_hyperparam_grid, run_synthetic_grid, select_hyper_cell, HyperCell,
};
pub use report::{emit_report, Format, Record, Report};

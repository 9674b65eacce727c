//! Experiment configuration, pipeline commands and their JSON/CSV reports.

pub mod commands;
pub mod config;
pub mod reports;

pub use commands::{
    audit, gen_data, hyper_sweep, read_sweep, sweep, train_models, AuditOutput, HyperAxis, Layout,
    BASELINE_NAME,
};
pub use config::{parse_list, ExperimentConfig};
pub use reports::{EvalReport, EvalRow, HyperReport, HyperRow, TrainReport};

//! Experiment harness: streaming runs, error metrics, sweeps and reports.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod stats;

pub use experiment::{
    lambda_sweep, run_experiment, scaling_benchmark, DataSource, ExperimentConfig, ExperimentRun,
    Ingested, InitSummary, LambdaPoint, ScalingPoint, ScalingSummary, Session, SessionConfig,
    UpdateReport,
};
pub use metrics::{global_error, local_error, slice_errors, History};
pub use report::{config_hash, summarize, write_run, RunSummary, WrittenFiles};

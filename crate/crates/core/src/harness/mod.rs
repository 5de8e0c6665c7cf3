//! Experiment runner: configuration, the lockstep simulation of nodes, the
//! metadata service and the FedAvg aggregator, and run summaries.

mod config;
mod node;
mod run;
mod summary;

pub use config::{Assignment, DatasetSource, DiscardConfig, ExperimentConfig, Mode, SensitivityMode};
pub use node::{EdgeNode, MAX_RETRIES};
pub use run::{fedavg_round, initial_model, run_experiment, Event, MetricRow, RunResult};
pub use summary::{
    read_metrics_csv, recovery_stats, summarize, summarize_dir, summarize_parts, write_metrics_csv, write_outputs,
    Recovery, Summary, CONFIG_FILE, LEDGER_FILE, METRICS_FILE, SUMMARY_FILE,
};

//! Experiment orchestration: configuration, world construction, runs, suites and file output.

mod build;
mod config;
mod output;
mod run;
mod suites;

pub use build::{build_world, client_groups, data_root, load_datasets, Prepared};
pub use config::{
    apply_override, preset_names, Assignment, DatasetConfig, DelayOverride, ExperimentConfig, FedAvgConfig,
    HierConfig, InitMode, LatencyConfig, LatencyPreset, ModelConfig, PartitionConfig, SyncConfig,
};
pub use output::{
    read_client_updates, read_manifest, read_queues, read_summary, read_timeseries, read_trace_hash, write_run,
    FILE_CLIENT_UPDATES, FILE_CONFIG, FILE_MANIFEST, FILE_QUEUES, FILE_SUMMARY, FILE_TIMESERIES, FILE_TRACE_HASH,
};
pub use run::{
    run_experiment, run_experiment_with, ClientCount, MetricsFrame, RunOptions, RunOutput, Summary, ThresholdHit,
};
pub use suites::{
    bandwidth_report, decay_ablation, median, queue_trace, run_many, scalability_suite, update_histogram,
    BandwidthRow, DecayAblation, DecayArm, QueueTrace, ScalabilityRow, ScalabilityTable,
};

use crate::data::DataError;
use crate::model::ModelError;
use crate::protocol::ProtocolError;
use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Io(String),
}

impl ExperimentError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        Self::Io(format!("{context}: {err}"))
    }

    /// 1 for anything wrong with the inputs, 2 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Parse(_) | Self::Data(_) | Self::Sim(SimError::Config(_)) => 1,
            _ => 2,
        }
    }

    /// Machine-readable description of a runtime failure, if there is one worth dumping.
    pub fn diagnostics(&self) -> Option<serde_json::Value> {
        match self {
            Self::Sim(SimError::NonFinite { time_ms, node, index }) => Some(serde_json::json!({
                "error": "non-finite",
                "message": self.to_string(),
                "sim_time_ms": time_ms,
                "node": node,
                "param_index": index,
            })),
            Self::Sim(SimError::Protocol { time_ms, node, source }) => Some(serde_json::json!({
                "error": "protocol",
                "message": self.to_string(),
                "sim_time_ms": time_ms,
                "node": node,
                "detail": source.to_string(),
            })),
            Self::Sim(SimError::Model(e)) => Some(serde_json::json!({
                "error": "model",
                "message": e.to_string(),
            })),
            _ => None,
        }
    }
}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => Self::Sim(SimError::Model(e)),
            other => Self::config("model", other.to_string()),
        }
    }
}

impl From<ProtocolError> for ExperimentError {
    fn from(e: ProtocolError) -> Self {
        Self::config("topology", e.to_string())
    }
}

//! Discrete-event engine: event ordering, links, compute delays and the run loop.

mod compute;
mod events;
mod link;
mod manifest;
mod world;

pub use compute::{sample_positive_gaussian, AggregationMs, ComputeProfile, TrainingDelayModel};
pub use events::{Event, EventQueue};
pub use link::{ByteCounters, ByteWindow, LatencyMatrix, LinkClass, LinkModel, REGIONS};
pub use manifest::{derive_seed, DerivedSeeds, RunManifest, CODE_VERSION};
pub use world::{
    AuditReport, EvalTarget, QueueSample, RunMetrics, StopCondition, StopReason, TimeRow, World, WorldSpec,
};

use crate::model::ModelError;
use crate::protocol::{NodeId, ProtocolError};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("t={time_ms:.3} ms, node {node}: {source}")]
    Protocol {
        time_ms: f64,
        node: NodeId,
        #[source]
        source: ProtocolError,
    },
    #[error("t={time_ms:.3} ms, node {node}: non-finite model parameter at index {index}")]
    NonFinite { time_ms: f64, node: NodeId, index: usize },
    #[error(transparent)]
    Model(ModelError),
    #[error("trace output: {0}")]
    Io(String),
}

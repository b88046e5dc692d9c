//! Parameter vectors, tiny trainable models and the aggregation formulas.

mod aggregate;
mod params;
mod tiny;
mod vector;

pub use aggregate::{
    client_staleness_weight, decay, fedasync_merge, fedavg_aggregate, server_merge,
    server_pair_weight, spyker_client_merge, staleness_damping, StalenessMode,
};
pub use params::{BaseSchedule, HyperParams};
pub use tiny::{sgd_step, Batch, ModelKind, ModelShape, Objective, TinyModel};
pub use vector::{Age, ModelVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value at parameter index {index}")]
    NonFinite { index: usize },
    #[error("rejected input: {0}")]
    Rejected(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

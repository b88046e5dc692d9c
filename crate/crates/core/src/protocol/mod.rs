//! Message handlers for every simulated system, written as state transitions
//! `(state, message) -> (state, outgoing messages)`.

mod client;
mod fedasync;
mod message;
mod rounds;
mod spyker;
mod sync_spyker;

use serde::{Deserialize, Serialize};

pub use client::ClientState;
pub use fedasync::FedAsyncServer;
pub use message::{Message, MessageKind, NodeId, Outgoing, Token, WireFormat};
pub use rounds::{CloudServer, EdgeServer, FedAvgServer, RoundServer};
pub use spyker::{ClientBook, ClientLedger, ServerState, SpykerParams};
pub use sync_spyker::SyncServerState;

use crate::model::{Age, ModelError, ModelVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("unknown client {0}")]
    UnknownClient(NodeId),
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Spyker,
    SyncSpyker,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedasync")]
    FedAsync,
    #[serde(rename = "hierfavg")]
    HierFavg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Spyker,
        Algorithm::SyncSpyker,
        Algorithm::FedAvg,
        Algorithm::FedAsync,
        Algorithm::HierFavg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Spyker => "spyker",
            Algorithm::SyncSpyker => "sync-spyker",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedAsync => "fedasync",
            Algorithm::HierFavg => "hierfavg",
        }
    }

    /// Whether clients are served by several peer servers.
    pub fn is_multi_server(self) -> bool {
        matches!(self, Algorithm::Spyker | Algorithm::SyncSpyker | Algorithm::HierFavg)
    }

    pub fn is_asynchronous(self) -> bool {
        matches!(self, Algorithm::Spyker | Algorithm::SyncSpyker | Algorithm::FedAsync)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Result of one handler invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub out: Vec<Outgoing<S>>,
    /// The node must now spend its aggregation time and then call `finish_aggregate`.
    pub aggregate: bool,
    /// Messages to put back at the head of the node's ingress queue, in order.
    pub replay: Vec<(NodeId, Message<S>)>,
}

impl<S> Default for Step<S> {
    fn default() -> Self {
        Self {
            out: Vec::new(),
            aggregate: false,
            replay: Vec::new(),
        }
    }
}

impl<S> Step<S> {
    pub fn send(out: Vec<Outgoing<S>>) -> Self {
        Self {
            out,
            ..Self::default()
        }
    }

    pub fn aggregate_if(ready: bool) -> Self {
        Self {
            aggregate: ready,
            ..Self::default()
        }
    }
}

/// How much work processing a message costs a server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Service {
    /// Bookkeeping only.
    Free,
    /// One model merge.
    Merge,
}

/// Any server-side node of any system.
#[derive(Debug, Clone)]
pub enum ServerNode<S> {
    Spyker(ServerState<S>),
    SyncSpyker(SyncServerState<S>),
    FedAsync(FedAsyncServer<S>),
    FedAvg(FedAvgServer<S>),
    Edge(EdgeServer<S>),
    Cloud(CloudServer<S>),
}

impl<S: Scalar> ServerNode<S> {
    pub fn start(&mut self) -> Vec<Outgoing<S>> {
        match self {
            ServerNode::Spyker(s) => s.start(),
            ServerNode::SyncSpyker(s) => s.start(),
            ServerNode::FedAsync(s) => s.start(),
            ServerNode::FedAvg(s) => s.start(),
            ServerNode::Edge(s) => s.start(),
            ServerNode::Cloud(_) => Vec::new(),
        }
    }

    pub fn service(&self, msg: &Message<S>) -> Service {
        match (self, msg) {
            (ServerNode::FedAvg(_) | ServerNode::Edge(_) | ServerNode::Cloud(_), _) => Service::Free,
            (ServerNode::SyncSpyker(s), Message::ClientUpdate { .. }) if s.in_sync => Service::Free,
            (_, Message::ClientUpdate { .. } | Message::ModelBroadcast { .. }) => Service::Merge,
            _ => Service::Free,
        }
    }

    pub fn handle(&mut self, from: NodeId, msg: Message<S>) -> Result<Step<S>, ProtocolError> {
        match self {
            ServerNode::Spyker(s) => s.handle(from, msg).map(Step::send),
            ServerNode::SyncSpyker(s) => s.handle(from, msg),
            ServerNode::FedAsync(s) => s.handle(from, msg).map(Step::send),
            ServerNode::FedAvg(s) => s.handle(from, msg),
            ServerNode::Edge(s) => s.handle(from, msg),
            ServerNode::Cloud(s) => s.handle(from, msg),
        }
    }

    pub fn finish_aggregate(&mut self) -> Result<Step<S>, ProtocolError> {
        match self {
            ServerNode::FedAvg(s) => s.finish_aggregate(),
            ServerNode::Edge(s) => s.finish_aggregate(),
            ServerNode::Cloud(s) => s.finish_aggregate(),
            _ => Err(ProtocolError::Violation("node has no deferred aggregation".into())),
        }
    }

    pub fn model(&self) -> &ModelVector<S> {
        match self {
            ServerNode::Spyker(s) => &s.model,
            ServerNode::SyncSpyker(s) => &s.model,
            ServerNode::FedAsync(s) => &s.model,
            ServerNode::FedAvg(s) => &s.core.model,
            ServerNode::Edge(s) => &s.core.model,
            ServerNode::Cloud(s) => &s.model,
        }
    }

    /// Model age for the multi-server systems; version or round counter otherwise.
    pub fn age(&self) -> Age<S> {
        match self {
            ServerNode::Spyker(s) => s.age,
            ServerNode::SyncSpyker(s) => s.age,
            ServerNode::FedAsync(s) => Age(S::of_f64(s.version as f64)),
            ServerNode::FedAvg(s) => Age(S::of_f64(s.core.round as f64)),
            ServerNode::Edge(s) => Age(S::of_f64(s.core.round as f64)),
            ServerNode::Cloud(s) => Age(S::of_f64(s.round as f64)),
        }
    }

    pub fn as_spyker(&self) -> Option<&ServerState<S>> {
        match self {
            ServerNode::Spyker(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_sync(&self) -> Option<&SyncServerState<S>> {
        match self {
            ServerNode::SyncSpyker(s) => Some(s),
            _ => None,
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::model::{Age, ModelVector};
use crate::scalar::Scalar;

/// Index of a node in the simulated topology. Servers come first, then clients.
pub type NodeId = usize;

/// Wire-size constants used for bandwidth accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WireFormat {
    pub header_bytes: u64,
    pub bytes_per_param: u64,
}

impl Default for WireFormat {
    fn default() -> Self {
        Self {
            header_bytes: 64,
            bytes_per_param: 4,
        }
    }
}

/// Circulating permission to start a server-model exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct Token<S> {
    pub bid: u64,
    pub ages: Vec<Age<S>>,
}

impl<S: Scalar> Token<S> {
    pub fn initial(n_servers: usize) -> Self {
        Self {
            bid: 1,
            ages: vec![Age::zero(); n_servers],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message<S> {
    /// Server to client: model to train, its age and the learning rate to use.
    ModelDispatch {
        model: ModelVector<S>,
        age: Age<S>,
        lr: f64,
    },
    /// Client to server: trained model echoing the age it was dispatched with.
    ClientUpdate {
        model: ModelVector<S>,
        age_sent: Age<S>,
    },
    /// Server to server: model shared under synchronisation id `bid`.
    ModelBroadcast {
        model: ModelVector<S>,
        age: Age<S>,
        bid: u64,
    },
    AgeBroadcast {
        age: Age<S>,
    },
    TokenPass(Token<S>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    ModelDispatch,
    ClientUpdate,
    ModelBroadcast,
    AgeBroadcast,
    TokenPass,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::ModelDispatch => "model-dispatch",
            MessageKind::ClientUpdate => "client-update",
            MessageKind::ModelBroadcast => "model-broadcast",
            MessageKind::AgeBroadcast => "age-broadcast",
            MessageKind::TokenPass => "token-pass",
        }
    }
}

impl<S: Scalar> Message<S> {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::ModelDispatch { .. } => MessageKind::ModelDispatch,
            Message::ClientUpdate { .. } => MessageKind::ClientUpdate,
            Message::ModelBroadcast { .. } => MessageKind::ModelBroadcast,
            Message::AgeBroadcast { .. } => MessageKind::AgeBroadcast,
            Message::TokenPass(_) => MessageKind::TokenPass,
        }
    }

    pub fn model(&self) -> Option<&ModelVector<S>> {
        match self {
            Message::ModelDispatch { model, .. }
            | Message::ClientUpdate { model, .. }
            | Message::ModelBroadcast { model, .. } => Some(model),
            _ => None,
        }
    }

    /// Serialized size: header plus parameters for model-bearing messages, header plus ages otherwise.
    pub fn payload_bytes(&self, wire: &WireFormat) -> u64 {
        match self {
            Message::AgeBroadcast { .. } => wire.header_bytes + wire.bytes_per_param,
            Message::TokenPass(t) => wire.header_bytes + wire.bytes_per_param * t.ages.len() as u64,
            _ => {
                let dim = self.model().map_or(0, ModelVector::dim) as u64;
                wire.header_bytes + wire.bytes_per_param * dim
            }
        }
    }

    /// Synchronisation id carried by the message, if any.
    pub fn bid(&self) -> Option<u64> {
        match self {
            Message::ModelBroadcast { bid, .. } => Some(*bid),
            Message::TokenPass(t) => Some(t.bid),
            _ => None,
        }
    }
}

/// A message a handler wants delivered to `dst`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing<S> {
    pub dst: NodeId,
    pub msg: Message<S>,
}

impl<S> Outgoing<S> {
    pub fn new(dst: NodeId, msg: Message<S>) -> Self {
        Self { dst, msg }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_sizes() {
        let wire = WireFormat::default();
        let m = Message::ClientUpdate {
            model: ModelVector::<f64>::zeros(10),
            age_sent: Age::zero(),
        };
        assert_eq!(m.payload_bytes(&wire), 64 + 40);
        let t = Message::<f64>::TokenPass(Token::initial(4));
        assert_eq!(t.payload_bytes(&wire), 64 + 16);
        assert_eq!(Message::<f32>::AgeBroadcast { age: Age(1.0) }.payload_bytes(&wire), 68);
    }
}

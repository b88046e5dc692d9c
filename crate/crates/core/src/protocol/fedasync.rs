use std::collections::BTreeMap;

use crate::model::{fedasync_merge, Age, ModelVector};
use crate::scalar::Scalar;

use super::message::{Message, NodeId, Outgoing};
use super::ProtocolError;

/// Single asynchronous server merging every update as soon as it is processed.
#[derive(Debug, Clone)]
pub struct FedAsyncServer<S> {
    pub model: ModelVector<S>,
    pub version: u64,
    pub alpha: f64,
    pub lr: f64,
    /// Model and version last dispatched to each client.
    sent: BTreeMap<NodeId, (u64, ModelVector<S>)>,
    data_sizes: BTreeMap<NodeId, usize>,
    total_data: usize,
}

impl<S: Scalar> FedAsyncServer<S> {
    pub fn new(model: ModelVector<S>, data_sizes: BTreeMap<NodeId, usize>, alpha: f64, lr: f64) -> Self {
        let total_data = data_sizes.values().sum();
        Self {
            model,
            version: 0,
            alpha,
            lr,
            sent: BTreeMap::new(),
            data_sizes,
            total_data,
        }
    }

    fn dispatch(&mut self, to: NodeId) -> Outgoing<S> {
        self.sent.insert(to, (self.version, self.model.clone()));
        Outgoing::new(
            to,
            Message::ModelDispatch {
                model: self.model.clone(),
                age: Age(S::of_f64(self.version as f64)),
                lr: self.lr,
            },
        )
    }

    pub fn start(&mut self) -> Vec<Outgoing<S>> {
        let ids: Vec<NodeId> = self.data_sizes.keys().copied().collect();
        ids.into_iter().map(|c| self.dispatch(c)).collect()
    }

    /// Staleness of a returning update, in merged versions.
    pub fn staleness_of(&self, client: NodeId) -> Option<u64> {
        self.sent.get(&client).map(|(v, _)| self.version - v)
    }

    pub fn on_client_update(
        &mut self,
        from: NodeId,
        returned: &ModelVector<S>,
    ) -> Result<Vec<Outgoing<S>>, ProtocolError> {
        let d_k = *self.data_sizes.get(&from).ok_or(ProtocolError::UnknownClient(from))?;
        let (sent_version, sent_model) = self
            .sent
            .get(&from)
            .ok_or_else(|| ProtocolError::Violation(format!("client {from} was never dispatched a model")))?;
        let tau = self.version - sent_version;
        self.model = fedasync_merge(
            &self.model,
            sent_model,
            returned,
            tau,
            d_k,
            self.total_data,
            S::of_f64(self.alpha),
        )?;
        self.version += 1;
        Ok(vec![self.dispatch(from)])
    }

    pub fn handle(&mut self, from: NodeId, msg: Message<S>) -> Result<Vec<Outgoing<S>>, ProtocolError> {
        match msg {
            Message::ClientUpdate { model, .. } => self.on_client_update(from, &model),
            other => Err(ProtocolError::Violation(format!(
                "asynchronous server cannot handle {}",
                other.kind().as_str()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staleness_counts_versions() {
        let sizes: BTreeMap<NodeId, usize> = [(1, 1), (2, 1)].into_iter().collect();
        let mut s = FedAsyncServer::new(ModelVector::<f64>::zeros(1), sizes, 0.5, 0.1);
        s.start();
        let one = ModelVector::new(vec![1.0]).unwrap();
        s.on_client_update(1, &one).unwrap();
        // zero staleness, half the data: 0 + 1 * 0.5 * (1 - 0)
        assert!((s.model[0] - 0.5).abs() < 1e-12);
        assert_eq!(s.staleness_of(2), Some(1));
        s.on_client_update(2, &one).unwrap();
        let expected = 0.5 + 2f64.powf(-0.5) * 0.5 * 1.0;
        assert!((s.model[0] - expected).abs() < 1e-12);
    }
}

//! Synchronous round-based baselines: single-server federated averaging and
//! two-level hierarchical averaging.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{fedavg_aggregate, Age, ModelVector};
use crate::scalar::Scalar;

use super::message::{Message, NodeId, Outgoing};
use super::{ProtocolError, Step};

/// Dispatch-collect-average loop over a fixed client population.
#[derive(Debug, Clone)]
pub struct RoundServer<S> {
    pub model: ModelVector<S>,
    pub round: u64,
    pub lr: f64,
    data_sizes: BTreeMap<NodeId, usize>,
    fraction: f64,
    rng: ChaCha8Rng,
    selected: Vec<NodeId>,
    pending: BTreeMap<NodeId, ModelVector<S>>,
}

impl<S: Scalar> RoundServer<S> {
    pub fn new(
        model: ModelVector<S>,
        data_sizes: BTreeMap<NodeId, usize>,
        lr: f64,
        fraction: f64,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        if data_sizes.is_empty() {
            return Err(ProtocolError::Config("a round server needs at least one client".into()));
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(ProtocolError::Config("client fraction must lie in (0, 1]".into()));
        }
        Ok(Self {
            model,
            round: 0,
            lr,
            data_sizes,
            fraction,
            rng: ChaCha8Rng::seed_from_u64(seed),
            selected: Vec::new(),
            pending: BTreeMap::new(),
        })
    }

    pub fn total_data(&self) -> usize {
        self.data_sizes.values().sum()
    }

    pub fn selected(&self) -> &[NodeId] {
        &self.selected
    }

    /// Picks this round's participants and sends them the current model.
    pub fn dispatch_round(&mut self) -> Vec<Outgoing<S>> {
        let ids: Vec<NodeId> = self.data_sizes.keys().copied().collect();
        let m = ((ids.len() as f64 * self.fraction).ceil() as usize).clamp(1, ids.len());
        self.selected = if m == ids.len() {
            ids
        } else {
            let mut pick: Vec<NodeId> = sample(&mut self.rng, ids.len(), m).into_iter().map(|i| ids[i]).collect();
            pick.sort_unstable();
            pick
        };
        self.pending.clear();
        let age = Age(S::of_f64(self.round as f64));
        self.selected
            .iter()
            .map(|&c| {
                Outgoing::new(
                    c,
                    Message::ModelDispatch {
                        model: self.model.clone(),
                        age,
                        lr: self.lr,
                    },
                )
            })
            .collect()
    }

    /// Stores an update; returns true once every participant has reported.
    pub fn collect(&mut self, from: NodeId, model: ModelVector<S>) -> Result<bool, ProtocolError> {
        if !self.data_sizes.contains_key(&from) {
            return Err(ProtocolError::UnknownClient(from));
        }
        if self.selected.binary_search(&from).is_err() {
            return Err(ProtocolError::Violation(format!("client {from} is not in round {}", self.round)));
        }
        if self.pending.insert(from, model).is_some() {
            return Err(ProtocolError::Violation(format!("client {from} reported twice in round {}", self.round)));
        }
        Ok(self.pending.len() == self.selected.len())
    }

    /// Averages the collected updates by data size and advances the round counter.
    pub fn aggregate(&mut self) -> Result<(), ProtocolError> {
        let updates: Vec<(&ModelVector<S>, usize)> =
            self.pending.iter().map(|(c, w)| (w, self.data_sizes[c])).collect();
        self.model = fedavg_aggregate(&updates)?;
        self.pending.clear();
        self.round += 1;
        Ok(())
    }
}

/// Single server running federated averaging.
#[derive(Debug, Clone)]
pub struct FedAvgServer<S> {
    pub core: RoundServer<S>,
}

impl<S: Scalar> FedAvgServer<S> {
    pub fn start(&mut self) -> Vec<Outgoing<S>> {
        self.core.dispatch_round()
    }

    pub fn handle(&mut self, from: NodeId, msg: Message<S>) -> Result<Step<S>, ProtocolError> {
        match msg {
            Message::ClientUpdate { model, .. } => Ok(Step::aggregate_if(self.core.collect(from, model)?)),
            other => Err(ProtocolError::Violation(format!(
                "averaging server cannot handle {}",
                other.kind().as_str()
            ))),
        }
    }

    pub fn finish_aggregate(&mut self) -> Result<Step<S>, ProtocolError> {
        self.core.aggregate()?;
        Ok(Step::send(self.core.dispatch_round()))
    }
}

/// Edge server of the hierarchical baseline.
#[derive(Debug, Clone)]
pub struct EdgeServer<S> {
    pub core: RoundServer<S>,
    pub cloud: NodeId,
    pub period: u64,
    pub awaiting_cloud: bool,
}

impl<S: Scalar> EdgeServer<S> {
    pub fn start(&mut self) -> Vec<Outgoing<S>> {
        self.core.dispatch_round()
    }

    pub fn handle(&mut self, from: NodeId, msg: Message<S>) -> Result<Step<S>, ProtocolError> {
        match msg {
            Message::ClientUpdate { model, .. } => Ok(Step::aggregate_if(self.core.collect(from, model)?)),
            Message::ModelDispatch { model, .. } if from == self.cloud => {
                if !self.awaiting_cloud {
                    return Err(ProtocolError::Violation("unexpected cloud model".into()));
                }
                self.awaiting_cloud = false;
                self.core.model = model;
                Ok(Step::send(self.core.dispatch_round()))
            }
            other => Err(ProtocolError::Violation(format!(
                "edge server cannot handle {} from {from}",
                other.kind().as_str()
            ))),
        }
    }

    pub fn finish_aggregate(&mut self) -> Result<Step<S>, ProtocolError> {
        self.core.aggregate()?;
        if self.core.round.is_multiple_of(self.period) {
            self.awaiting_cloud = true;
            let upload = Message::ClientUpdate {
                model: self.core.model.clone(),
                age_sent: Age(S::of_f64(self.core.round as f64)),
            };
            Ok(Step::send(vec![Outgoing::new(self.cloud, upload)]))
        } else {
            Ok(Step::send(self.core.dispatch_round()))
        }
    }
}

/// Cloud server averaging edge models, weighted by the data behind each edge.
#[derive(Debug, Clone)]
pub struct CloudServer<S> {
    pub model: ModelVector<S>,
    pub round: u64,
    edge_sizes: BTreeMap<NodeId, usize>,
    pending: BTreeMap<NodeId, ModelVector<S>>,
}

impl<S: Scalar> CloudServer<S> {
    pub fn new(model: ModelVector<S>, edge_sizes: BTreeMap<NodeId, usize>) -> Self {
        Self {
            model,
            round: 0,
            edge_sizes,
            pending: BTreeMap::new(),
        }
    }

    pub fn handle(&mut self, from: NodeId, msg: Message<S>) -> Result<Step<S>, ProtocolError> {
        match msg {
            Message::ClientUpdate { model, .. } if self.edge_sizes.contains_key(&from) => {
                if self.pending.insert(from, model).is_some() {
                    return Err(ProtocolError::Violation(format!("edge {from} uploaded twice")));
                }
                Ok(Step::aggregate_if(self.pending.len() == self.edge_sizes.len()))
            }
            other => Err(ProtocolError::Violation(format!(
                "cloud cannot handle {} from {from}",
                other.kind().as_str()
            ))),
        }
    }

    pub fn finish_aggregate(&mut self) -> Result<Step<S>, ProtocolError> {
        let updates: Vec<(&ModelVector<S>, usize)> =
            self.pending.iter().map(|(e, w)| (w, self.edge_sizes[e])).collect();
        self.model = fedavg_aggregate(&updates)?;
        self.pending.clear();
        self.round += 1;
        let age = Age(S::of_f64(self.round as f64));
        let out = self
            .edge_sizes
            .keys()
            .map(|&e| {
                Outgoing::new(
                    e,
                    Message::ModelDispatch {
                        model: self.model.clone(),
                        age,
                        lr: 0.0,
                    },
                )
            })
            .collect();
        Ok(Step::send(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64) -> ModelVector<f64> {
        ModelVector::new(vec![x]).unwrap()
    }

    #[test]
    fn single_client_round_adopts_update() {
        let sizes = [(5, 10)].into_iter().collect();
        let mut s = FedAvgServer {
            core: RoundServer::new(v(0.0), sizes, 0.1, 1.0, 0).unwrap(),
        };
        assert_eq!(s.start().len(), 1);
        let step = s.handle(5, Message::ClientUpdate { model: v(3.0), age_sent: Age(0.0) }).unwrap();
        assert!(step.aggregate);
        let step = s.finish_aggregate().unwrap();
        assert_eq!(s.core.model, v(3.0));
        assert_eq!(s.core.round, 1);
        assert_eq!(step.out.len(), 1);
    }

    #[test]
    fn duplicate_report_rejected() {
        let sizes = [(5, 10), (6, 10)].into_iter().collect();
        let mut s = RoundServer::new(v(0.0), sizes, 0.1, 1.0, 0).unwrap();
        s.dispatch_round();
        assert!(!s.collect(5, v(1.0)).unwrap());
        assert!(s.collect(5, v(1.0)).is_err());
    }

    #[test]
    fn fraction_selects_subset() {
        let sizes = (10..20).map(|c| (c, 1)).collect();
        let mut s = RoundServer::<f64>::new(v(0.0), sizes, 0.1, 0.3, 4).unwrap();
        let out = s.dispatch_round();
        assert_eq!(out.len(), 3);
        assert!(s.selected().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cloud_mean_of_two_equal_edges() {
        let sizes = [(0, 5), (1, 5)].into_iter().collect();
        let mut cloud = CloudServer::new(v(9.0), sizes);
        let a = cloud.handle(0, Message::ClientUpdate { model: v(0.0), age_sent: Age(1.0) }).unwrap();
        assert!(!a.aggregate);
        let b = cloud.handle(1, Message::ClientUpdate { model: v(2.0), age_sent: Age(1.0) }).unwrap();
        assert!(b.aggregate);
        let out = cloud.finish_aggregate().unwrap().out;
        assert_eq!(cloud.model, v(1.0));
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn edge_uploads_every_period() {
        let sizes = [(10, 1)].into_iter().collect();
        let mut e = EdgeServer {
            core: RoundServer::new(v(0.0), sizes, 0.1, 1.0, 0).unwrap(),
            cloud: 4,
            period: 2,
            awaiting_cloud: false,
        };
        e.start();
        e.handle(10, Message::ClientUpdate { model: v(1.0), age_sent: Age(0.0) }).unwrap();
        let s1 = e.finish_aggregate().unwrap();
        assert_eq!(s1.out[0].dst, 10);
        e.handle(10, Message::ClientUpdate { model: v(2.0), age_sent: Age(1.0) }).unwrap();
        let s2 = e.finish_aggregate().unwrap();
        assert_eq!(s2.out[0].dst, 4);
        assert!(e.awaiting_cloud);
        let s3 = e
            .handle(4, Message::ModelDispatch { model: v(7.0), age: Age(1.0), lr: 0.0 })
            .unwrap();
        assert_eq!(e.core.model, v(7.0));
        assert_eq!(s3.out[0].dst, 10);
    }
}

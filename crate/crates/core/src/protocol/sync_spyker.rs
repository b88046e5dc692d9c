//! Multi-server variant where all servers periodically stop, exchange models and
//! fold them in a fixed order so that every server ends with the same model.

use std::collections::BTreeMap;

use crate::model::{server_merge, Age, ModelVector};
use crate::scalar::Scalar;

use super::message::{Message, NodeId, Outgoing};
use super::spyker::{absorb_client_update, ClientLedger, SpykerParams};
use super::{ProtocolError, Step};

#[derive(Debug, Clone)]
pub struct SyncServerState<S> {
    pub id: usize,
    pub model: ModelVector<S>,
    pub age: Age<S>,
    pub age_prev: Age<S>,
    pub ledger: ClientLedger<S>,
    /// Age growth since the last exchange that starts a new one.
    pub period: f64,
    /// Id of the current or most recent exchange.
    pub round: u64,
    pub in_sync: bool,
    /// Exchanges completed so far.
    pub completed: u64,
    received: BTreeMap<u64, BTreeMap<usize, (ModelVector<S>, Age<S>)>>,
    buffered: Vec<(NodeId, Message<S>)>,
    folds: Vec<(u64, ModelVector<S>)>,
    params: SpykerParams,
}

impl<S: Scalar> SyncServerState<S> {
    pub fn new(id: usize, params: SpykerParams, model: ModelVector<S>, clients: &[NodeId], period: f64) -> Self {
        Self {
            id,
            model,
            age: Age::zero(),
            age_prev: Age::zero(),
            ledger: ClientLedger::new(clients, params.hyper.eta_init),
            period,
            round: 0,
            in_sync: false,
            completed: 0,
            received: BTreeMap::new(),
            buffered: Vec::new(),
            folds: Vec::new(),
            params,
        }
    }

    pub fn start(&mut self) -> Vec<Outgoing<S>> {
        self.ledger.dispatch_all(&self.model, self.age)
    }

    pub fn buffered_len(&self) -> usize {
        self.buffered.len()
    }

    /// Results of exchanges completed since the last call, as `(exchange id, model)`.
    pub fn take_folds(&mut self) -> Vec<(u64, ModelVector<S>)> {
        std::mem::take(&mut self.folds)
    }

    fn begin(&mut self, round: u64) -> Vec<Outgoing<S>> {
        self.round = round;
        self.in_sync = true;
        self.received
            .entry(round)
            .or_default()
            .insert(self.id, (self.model.clone(), self.age));
        (0..self.params.n_servers)
            .filter(|&j| j != self.id)
            .map(|j| {
                Outgoing::new(
                    j,
                    Message::ModelBroadcast {
                        model: self.model.clone(),
                        age: self.age,
                        bid: round,
                    },
                )
            })
            .collect()
    }

    /// Completes every exchange whose models have all arrived, joining later ones already started by peers.
    fn settle(&mut self, step: &mut Step<S>) -> Result<(), ProtocolError> {
        while self.in_sync && self.received.get(&self.round).map_or(0, BTreeMap::len) == self.params.n_servers {
            let models = self.received.remove(&self.round).expect("complete round");
            let mut iter = models.into_values();
            let (mut w, mut a) = iter.next().expect("n >= 1");
            for (w_j, a_j) in iter {
                (w, a) = server_merge(
                    &w,
                    a,
                    &w_j,
                    a_j,
                    S::of_f64(self.params.eta_a),
                    S::of_f64(self.params.phi),
                )?;
            }
            self.model = w;
            self.age = a;
            self.age_prev = a;
            self.in_sync = false;
            self.completed += 1;
            self.folds.push((self.round, self.model.clone()));
            step.replay.append(&mut self.buffered);
            if self.received.contains_key(&(self.round + 1)) {
                let next = self.round + 1;
                step.out.extend(self.begin(next));
            }
        }
        Ok(())
    }

    pub fn handle(&mut self, from: NodeId, msg: Message<S>) -> Result<Step<S>, ProtocolError> {
        let mut step = Step::default();
        match msg {
            Message::ClientUpdate { .. } if self.in_sync => {
                self.buffered.push((from, msg));
            }
            Message::ClientUpdate { model, age_sent } => {
                let reply = absorb_client_update(
                    &mut self.model,
                    &mut self.age,
                    &mut self.ledger,
                    &self.params,
                    from,
                    &model,
                    age_sent,
                )?;
                step.out.push(reply);
                if self.params.n_servers > 1 && (self.age.0 - self.age_prev.0).as_f64() >= self.period {
                    let next = self.round + 1;
                    step.out.extend(self.begin(next));
                    self.settle(&mut step)?;
                }
            }
            Message::ModelBroadcast { model, age, bid } => {
                let expected = if self.in_sync {
                    bid == self.round || bid == self.round + 1
                } else {
                    bid == self.round + 1
                };
                if !expected {
                    return Err(ProtocolError::Violation(format!(
                        "server {} got a model for finished exchange {bid}",
                        self.id
                    )));
                }
                if !self.in_sync && bid == self.round + 1 {
                    step.out.extend(self.begin(bid));
                }
                let slot = self.received.entry(bid).or_default();
                if slot.insert(from, (model, age)).is_some() {
                    return Err(ProtocolError::Violation(format!("duplicate model from {from} for exchange {bid}")));
                }
                self.settle(&mut step)?;
            }
            other => {
                return Err(ProtocolError::Violation(format!(
                    "synchronous multi-server node cannot handle {}",
                    other.kind().as_str()
                )))
            }
        }
        Ok(step)
    }
}

//! Asynchronous multi-server protocol: client aggregation with learning-rate decay,
//! and token-driven model exchange between servers.

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{
    client_staleness_weight, server_merge, spyker_client_merge, Age, HyperParams, ModelVector,
    StalenessMode,
};
use crate::scalar::Scalar;

use super::message::{Message, NodeId, Outgoing, Token};
use super::ProtocolError;

/// Constants a server needs at runtime, resolved from [`HyperParams`] and the topology.
#[derive(Debug, Clone, PartialEq)]
pub struct SpykerParams {
    pub n_servers: usize,
    pub h_inter: f64,
    pub h_intra: f64,
    pub eta_server: f64,
    pub eta_a: f64,
    pub phi: f64,
    pub staleness_mode: StalenessMode,
    pub hyper: HyperParams,
}

impl SpykerParams {
    pub fn new(hyper: &HyperParams, n_servers: usize, n_clients: usize) -> Self {
        Self {
            n_servers,
            h_inter: hyper.h_inter_for(n_clients, n_servers),
            h_intra: hyper.h_intra,
            eta_server: hyper.eta_server,
            eta_a: hyper.eta_a,
            phi: hyper.phi,
            staleness_mode: hyper.staleness_mode,
            hyper: hyper.clone(),
        }
    }
}

/// Per-client bookkeeping held by its home server.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientBook<S> {
    pub updates: u64,
    pub lr: f64,
    /// Age attached to the last model dispatched to this client.
    pub sent_age: Age<S>,
}

/// Learning-rate and update-count bookkeeping shared by the asynchronous servers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientLedger<S> {
    books: BTreeMap<NodeId, ClientBook<S>>,
}

impl<S: Scalar> ClientLedger<S> {
    pub fn new(clients: &[NodeId], eta_init: f64) -> Self {
        let books = clients
            .iter()
            .map(|&c| {
                (
                    c,
                    ClientBook {
                        updates: 0,
                        lr: eta_init,
                        sent_age: Age::zero(),
                    },
                )
            })
            .collect();
        Self { books }
    }

    pub fn get(&self, client: NodeId) -> Option<&ClientBook<S>> {
        self.books.get(&client)
    }

    pub fn clients(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.books.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.books.len()
    }

    pub fn is_empty(&self) -> bool {
        self.books.is_empty()
    }

    pub fn mean_updates(&self) -> f64 {
        if self.books.is_empty() {
            return 0.0;
        }
        self.books.values().map(|b| b.updates as f64).sum::<f64>() / self.books.len() as f64
    }

    /// Checks the echoed age against the dispatch record and returns the staleness weight.
    ///
    /// The server age can shrink below a dispatched age after a peer merge, so the
    /// gap is floored at zero in that case.
    fn staleness_weight(
        &self,
        from: NodeId,
        server_age: Age<S>,
        age_sent: Age<S>,
        mode: StalenessMode,
    ) -> Result<S, ProtocolError> {
        let book = self.books.get(&from).ok_or(ProtocolError::UnknownClient(from))?;
        if age_sent != book.sent_age {
            return Err(ProtocolError::Violation(format!(
                "client {from} echoed age {} but was dispatched age {}",
                age_sent.0, book.sent_age.0
            )));
        }
        Ok(client_staleness_weight(server_age.max(age_sent), age_sent, mode)?)
    }

    /// Counts one update from `from` and returns its new learning rate.
    fn record_update(&mut self, from: NodeId, hyper: &HyperParams) -> f64 {
        let book = self.books.get_mut(&from).expect("client checked before");
        book.updates += 1;
        let u_k = book.updates;
        let mean = self.mean_updates();
        let lr = hyper.client_lr(u_k, mean);
        self.books.get_mut(&from).expect("present").lr = lr;
        lr
    }

    fn dispatch(&mut self, to: NodeId, model: &ModelVector<S>, age: Age<S>) -> Outgoing<S> {
        let book = self.books.get_mut(&to).expect("client checked before");
        book.sent_age = age;
        Outgoing::new(
            to,
            Message::ModelDispatch {
                model: model.clone(),
                age,
                lr: book.lr,
            },
        )
    }

    /// Initial dispatch to every client.
    pub fn dispatch_all(&mut self, model: &ModelVector<S>, age: Age<S>) -> Vec<Outgoing<S>> {
        let ids: Vec<NodeId> = self.clients().collect();
        ids.into_iter().map(|c| self.dispatch(c, model, age)).collect()
    }
}

/// Absorbs a client update the way every asynchronous multi-server variant does.
///
/// Returns the reply dispatch for the client.
pub(crate) fn absorb_client_update<S: Scalar>(
    model: &mut ModelVector<S>,
    age: &mut Age<S>,
    ledger: &mut ClientLedger<S>,
    params: &SpykerParams,
    from: NodeId,
    update: &ModelVector<S>,
    age_sent: Age<S>,
) -> Result<Outgoing<S>, ProtocolError> {
    let weight = ledger.staleness_weight(from, *age, age_sent, params.staleness_mode)?;
    *model = spyker_client_merge(model, update, weight, S::of_f64(params.eta_server))?;
    *age = age.incremented();
    ledger.record_update(from, &params.hyper);
    Ok(ledger.dispatch(from, model, *age))
}

/// One server of the token protocol.
#[derive(Debug, Clone)]
pub struct ServerState<S> {
    pub id: usize,
    pub model: ModelVector<S>,
    pub age: Age<S>,
    pub age_prev: Age<S>,
    pub ledger: ClientLedger<S>,
    /// Last known age of every server, monotone per entry.
    pub ages: Vec<Age<S>>,
    pub token: Option<Token<S>>,
    pub did_broadcast: BTreeSet<u64>,
    pub cnt: BTreeMap<u64, usize>,
    pub ongoing_synchro: bool,
    pub ring_successor: usize,
    last_age_broadcast: Option<Age<S>>,
    params: SpykerParams,
}

impl<S: Scalar> ServerState<S> {
    /// Builds server `id`; servers are node ids `0..n_servers` and the token starts at `ring_order[0]`.
    pub fn server_init(
        id: usize,
        params: SpykerParams,
        initial_model: ModelVector<S>,
        ring_order: &[usize],
        clients: &[NodeId],
    ) -> Result<Self, ProtocolError> {
        let n = params.n_servers;
        let mut sorted = ring_order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(ProtocolError::Config(format!(
                "ring order {ring_order:?} is not a permutation of 0..{n}"
            )));
        }
        let pos = ring_order.iter().position(|&s| s == id).ok_or_else(|| {
            ProtocolError::Config(format!("server {id} missing from ring order"))
        })?;
        Ok(Self {
            id,
            model: initial_model,
            age: Age::zero(),
            age_prev: Age::zero(),
            ledger: ClientLedger::new(clients, params.hyper.eta_init),
            ages: vec![Age::zero(); n],
            token: (ring_order[0] == id).then(|| Token::initial(n)),
            did_broadcast: BTreeSet::new(),
            cnt: BTreeMap::new(),
            ongoing_synchro: false,
            ring_successor: ring_order[(pos + 1) % n],
            last_age_broadcast: None,
            params,
        })
    }

    pub fn params(&self) -> &SpykerParams {
        &self.params
    }

    pub fn has_token(&self) -> bool {
        self.token.is_some()
    }

    /// Initial model dispatch to all of this server's clients.
    pub fn start(&mut self) -> Vec<Outgoing<S>> {
        self.ledger.dispatch_all(&self.model, self.age)
    }

    fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.params.n_servers).filter(move |&j| j != self.id)
    }

    fn note_own_age(&mut self) {
        let own = &mut self.ages[self.id];
        *own = own.max(self.age);
    }

    fn after_merge(&mut self) {
        // a peer merge can pull the age below the last synchronisation point
        if self.age < self.age_prev {
            self.age_prev = self.age;
        }
        self.note_own_age();
    }

    fn broadcast_model(&self, bid: u64) -> Vec<Outgoing<S>> {
        self.peers()
            .map(|j| {
                Outgoing::new(
                    j,
                    Message::ModelBroadcast {
                        model: self.model.clone(),
                        age: self.age,
                        bid,
                    },
                )
            })
            .collect()
    }

    pub fn on_client_update(
        &mut self,
        from: NodeId,
        update: &ModelVector<S>,
        age_sent: Age<S>,
    ) -> Result<Vec<Outgoing<S>>, ProtocolError> {
        let reply = absorb_client_update(
            &mut self.model,
            &mut self.age,
            &mut self.ledger,
            &self.params,
            from,
            update,
            age_sent,
        )?;
        self.note_own_age();
        let mut out = vec![reply];
        out.extend(self.check_synchronization());
        Ok(out)
    }

    pub fn trigger_holds(&self) -> bool {
        let mut lo = self.age.0;
        let mut hi = self.age.0;
        for (j, a) in self.ages.iter().enumerate() {
            if j != self.id {
                lo = lo.min(a.0);
                hi = hi.max(a.0);
            }
        }
        (hi - lo).as_f64() >= self.params.h_inter
            || (self.age.0 - self.age_prev.0).as_f64() >= self.params.h_intra
    }

    pub fn check_synchronization(&mut self) -> Vec<Outgoing<S>> {
        if self.params.n_servers < 2 || !self.trigger_holds() {
            return Vec::new();
        }
        match &self.token {
            Some(token) if !self.ongoing_synchro => {
                let bid = token.bid;
                self.age_prev = self.age;
                self.ongoing_synchro = true;
                self.did_broadcast.insert(bid);
                self.cnt.insert(bid, 1);
                self.broadcast_model(bid)
            }
            Some(_) => Vec::new(),
            None => {
                let grown = self
                    .last_age_broadcast
                    .is_none_or(|last| (self.age.0 - last.0).as_f64() >= 1.0);
                if !grown {
                    return Vec::new();
                }
                self.last_age_broadcast = Some(self.age);
                let age = self.age;
                self.peers()
                    .map(|j| Outgoing::new(j, Message::AgeBroadcast { age }))
                    .collect()
            }
        }
    }

    pub fn on_rcv_age(&mut self, from: usize, age: Age<S>) -> Vec<Outgoing<S>> {
        self.ages[from] = self.ages[from].max(age);
        self.check_synchronization()
    }

    pub fn on_rcv_token(&mut self, mut token: Token<S>) -> Result<Vec<Outgoing<S>>, ProtocolError> {
        if self.token.is_some() {
            return Err(ProtocolError::Violation(format!(
                "server {} received a token while holding one",
                self.id
            )));
        }
        if token.ages.len() != self.ages.len() {
            return Err(ProtocolError::Violation("token age vector has wrong length".into()));
        }
        for (mine, theirs) in self.ages.iter_mut().zip(&token.ages) {
            *mine = mine.max(*theirs);
        }
        token.bid += 1;
        self.token = Some(token);
        Ok(self.check_synchronization())
    }

    pub fn on_rcv_model(
        &mut self,
        from: usize,
        model: &ModelVector<S>,
        age: Age<S>,
        bid: u64,
    ) -> Result<Vec<Outgoing<S>>, ProtocolError> {
        self.ages[from] = self.ages[from].max(age);
        let mut out = Vec::new();
        if self.did_broadcast.insert(bid) {
            self.age_prev = self.age;
            out.extend(self.broadcast_model(bid));
        }
        let (w, a) = server_merge(
            &self.model,
            self.age,
            model,
            age,
            S::of_f64(self.params.eta_a),
            S::of_f64(self.params.phi),
        )?;
        self.model = w;
        self.age = a;
        self.after_merge();

        let holds_bid = self.token.as_ref().is_some_and(|t| t.bid == bid);
        if holds_bid {
            let c = self.cnt.entry(bid).or_insert(0);
            *c += 1;
            if *c == self.params.n_servers {
                let mut token = self.token.take().expect("holder");
                token.ages = self.ages.clone();
                self.ongoing_synchro = false;
                out.push(Outgoing::new(self.ring_successor, Message::TokenPass(token)));
            }
        }
        Ok(out)
    }

    /// Routes a server-bound message to its handler.
    pub fn handle(&mut self, from: NodeId, msg: Message<S>) -> Result<Vec<Outgoing<S>>, ProtocolError> {
        match msg {
            Message::ClientUpdate { model, age_sent } => self.on_client_update(from, &model, age_sent),
            Message::AgeBroadcast { age } => Ok(self.on_rcv_age(from, age)),
            Message::TokenPass(token) => self.on_rcv_token(token),
            Message::ModelBroadcast { model, age, bid } => self.on_rcv_model(from, &model, age, bid),
            Message::ModelDispatch { .. } => Err(ProtocolError::Violation(format!(
                "server {} received a model dispatch",
                self.id
            ))),
        }
    }
}

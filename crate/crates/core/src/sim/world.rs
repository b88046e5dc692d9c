use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::model::{ModelError, ModelShape, ModelVector, TinyModel};
use crate::protocol::{
    Algorithm, ClientState, Message, NodeId, Outgoing, ProtocolError, ServerNode, Service, Step, WireFormat,
};
use crate::scalar::Scalar;

use super::events::EventQueue;
use super::link::{ByteCounters, LinkModel};
use super::SimError;

/// Which model the system accuracy is measured on when several servers hold one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTarget {
    /// Average of the server models weighted by model age.
    #[default]
    AgeWeighted,
    /// A single server's model.
    Server(usize),
    /// The most accurate server model.
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopCondition {
    pub horizon_ms: f64,
    pub target_accuracy: Option<f64>,
    pub max_updates: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Horizon,
    TargetAccuracy,
    MaxUpdates,
    /// No events were left before the horizon.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct WorldSpec {
    pub algorithm: Algorithm,
    pub stop: StopCondition,
    pub eval_interval_ms: f64,
    /// Queue-length sampling period; `None` disables the series (peaks are always tracked).
    pub queue_sample_ms: Option<f64>,
    pub eval_target: EvalTarget,
    pub per_server_accuracy: bool,
    pub audit: bool,
    pub wire: WireFormat,
    pub aggregation_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRow {
    pub sim_time_ms: f64,
    pub updates_processed: u64,
    pub accuracy: f64,
    pub server_accuracy: Vec<f64>,
    pub queue_len: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSample {
    pub sim_time_ms: f64,
    pub queue_len: Vec<usize>,
}

/// Result of protocol audits collected during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub violations: Vec<String>,
    pub token_passes: u64,
    pub model_broadcasts: u64,
    /// Completed synchronous exchanges whose results were compared across all servers.
    pub exchanges_checked: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<TimeRow>,
    pub queue_samples: Vec<QueueSample>,
    pub queue_peaks: Vec<usize>,
    /// Client updates absorbed, indexed by client number (not node id).
    pub client_updates: Vec<u64>,
    pub all_bytes: ByteCounters,
    pub window_bytes: ByteCounters,
    pub updates_processed: u64,
    pub events_processed: u64,
    pub end_time_ms: f64,
    pub stop: StopReason,
    pub trace_hash: String,
    pub audit: Option<AuditReport>,
}

enum Payload<S> {
    Deliver { src: NodeId, dst: NodeId, msg: Message<S> },
    ServerDone { node: NodeId, job: Job<S> },
    ClientDone { node: NodeId, msg: Message<S> },
}

enum Job<S> {
    Handle { from: NodeId, msg: Message<S> },
    Aggregate,
}

struct ServerProc<S> {
    node: ServerNode<S>,
    queue: VecDeque<(NodeId, Message<S>)>,
    busy: bool,
    peak: usize,
}

struct Audit<S> {
    report: AuditReport,
    broadcasts: BTreeSet<(NodeId, NodeId, u64)>,
    tokens_in_transit: i64,
    folds: BTreeMap<u64, (ModelVector<S>, usize)>,
}

/// A deterministic single-threaded simulation of one system.
pub struct World<S> {
    spec: WorldSpec,
    now: f64,
    events: EventQueue<Payload<S>>,
    link: LinkModel,
    servers: Vec<ServerProc<S>>,
    clients: Vec<ClientState>,
    eval_nodes: Vec<NodeId>,
    shape: ModelShape,
    test: Arc<Dataset>,
    client_updates: Vec<u64>,
    updates_processed: u64,
    events_processed: u64,
    hasher: Sha256,
    audit: Option<Audit<S>>,
    trace: Option<Box<dyn Write + Send>>,
    rows: Vec<TimeRow>,
    queue_samples: Vec<QueueSample>,
    next_eval: u64,
    next_queue_sample: u64,
    started: bool,
}

fn fingerprint<S: Scalar>(h: &mut Sha256, model: &ModelVector<S>) {
    let v = model.as_slice();
    let stride = if v.len() <= 1024 { 1 } else { 97 };
    for x in v.iter().step_by(stride) {
        h.update(x.as_f64().to_bits().to_le_bytes());
    }
}

impl<S: Scalar> World<S> {
    /// Servers occupy node ids `0..servers.len()`; clients follow in order.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: WorldSpec,
        servers: Vec<ServerNode<S>>,
        clients: Vec<ClientState>,
        link: LinkModel,
        eval_nodes: Vec<NodeId>,
        shape: ModelShape,
        test: Arc<Dataset>,
    ) -> Result<Self, SimError> {
        let n_servers = servers.len();
        if link.n_nodes() != n_servers + clients.len() {
            return Err(SimError::Config("link model covers a different number of nodes".into()));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.id != n_servers + i || c.home >= n_servers {
                return Err(SimError::Config(format!("client {i} has inconsistent node ids")));
            }
        }
        if eval_nodes.is_empty() || eval_nodes.iter().any(|&n| n >= n_servers) {
            return Err(SimError::Config("evaluation needs at least one server node".into()));
        }
        if let EvalTarget::Server(i) = spec.eval_target {
            if i >= eval_nodes.len() {
                return Err(SimError::Config(format!("eval target server {i} does not exist")));
            }
        }
        if !(spec.eval_interval_ms > 0.0) || matches!(spec.queue_sample_ms, Some(q) if !(q > 0.0)) {
            return Err(SimError::Config("sampling intervals must be positive".into()));
        }
        let audit = spec.audit.then(|| Audit {
            report: AuditReport::default(),
            broadcasts: BTreeSet::new(),
            tokens_in_transit: 0,
            folds: BTreeMap::new(),
        });
        let n_clients = clients.len();
        Ok(Self {
            spec,
            now: 0.0,
            events: EventQueue::new(),
            link,
            servers: servers
                .into_iter()
                .map(|node| ServerProc {
                    node,
                    queue: VecDeque::new(),
                    busy: false,
                    peak: 0,
                })
                .collect(),
            clients,
            eval_nodes,
            shape,
            test,
            client_updates: vec![0; n_clients],
            updates_processed: 0,
            events_processed: 0,
            hasher: Sha256::new(),
            audit,
            trace: None,
            rows: Vec::new(),
            queue_samples: Vec::new(),
            next_eval: 0,
            next_queue_sample: 0,
            started: false,
        })
    }

    /// Writes one JSON line per handler invocation.
    pub fn set_trace(&mut self, sink: Box<dyn Write + Send>) {
        self.trace = Some(sink);
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn server(&self, id: NodeId) -> &ServerNode<S> {
        &self.servers[id].node
    }

    pub fn n_server_nodes(&self) -> usize {
        self.servers.len()
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    fn is_client(&self, node: NodeId) -> bool {
        node >= self.servers.len()
    }

    fn send(&mut self, src: NodeId, out: Outgoing<S>) -> Result<(), SimError> {
        let Outgoing { dst, msg } = out;
        // clients only ever talk to their home server
        let pair_ok = match (self.is_client(src), self.is_client(dst)) {
            (true, true) => false,
            (true, false) => self.clients[src - self.servers.len()].home == dst,
            (false, true) => self.clients[dst - self.servers.len()].home == src,
            (false, false) => true,
        };
        if !pair_ok {
            return Err(SimError::Protocol {
                time_ms: self.now,
                node: src,
                source: ProtocolError::Violation(format!("message {src} -> {dst} breaks client-server affinity")),
            });
        }
        if let Some(audit) = self.audit.as_mut() {
            match &msg {
                Message::ModelBroadcast { bid, .. } if self.spec.algorithm == Algorithm::Spyker => {
                    audit.report.model_broadcasts += 1;
                    if !audit.broadcasts.insert((src, dst, *bid)) {
                        audit.report.violations.push(format!("server {src} sent bid {bid} to server {dst} twice"));
                    }
                }
                Message::TokenPass(t) => {
                    audit.report.token_passes += 1;
                    audit.tokens_in_transit += 1;
                    let n = self.servers.len();
                    let cnt = self.servers[src]
                        .node
                        .as_spyker()
                        .and_then(|s| s.cnt.get(&t.bid).copied())
                        .unwrap_or(0);
                    if cnt != n {
                        audit.report.violations.push(format!(
                            "server {src} passed token bid {} with cnt {cnt} of {n}",
                            t.bid
                        ));
                    }
                }
                _ => {}
            }
        }
        let bytes = msg.payload_bytes(&self.spec.wire);
        let at = self.link.send(src, dst, bytes, self.now)?;
        self.events.push(at, Payload::Deliver { src, dst, msg });
        Ok(())
    }

    fn start_next(&mut self, node: NodeId) {
        let proc = &mut self.servers[node];
        if proc.busy {
            return;
        }
        if let Some((from, msg)) = proc.queue.pop_front() {
            let ms = match proc.node.service(&msg) {
                Service::Merge => self.spec.aggregation_ms,
                Service::Free => 0.0,
            };
            proc.busy = true;
            self.events
                .push(self.now + ms, Payload::ServerDone { node, job: Job::Handle { from, msg } });
        }
    }

    fn protocol_error(&self, node: NodeId, source: ProtocolError) -> SimError {
        match source {
            ProtocolError::Model(ModelError::NonFinite { index }) => SimError::NonFinite {
                time_ms: self.now,
                node,
                index,
            },
            source => SimError::Protocol {
                time_ms: self.now,
                node,
                source,
            },
        }
    }

    fn write_trace(&mut self, node: NodeId, kind: &str, bid: Option<u64>) -> Result<(), SimError> {
        let Some(sink) = self.trace.as_mut() else {
            return Ok(());
        };
        let ages: Vec<f64> = match &self.servers[node].node {
            ServerNode::Spyker(s) => s.ages.iter().map(|a| a.0.as_f64()).collect(),
            other => vec![other.age().0.as_f64()],
        };
        let line = serde_json::json!({
            "t": self.now,
            "node": node,
            "kind": kind,
            "bid": bid,
            "age": self.servers[node].node.age().0.as_f64(),
            "ages": ages,
        });
        writeln!(sink, "{line}").map_err(|e| SimError::Io(e.to_string()))
    }

    fn apply_step(&mut self, node: NodeId, step: Step<S>) -> Result<(), SimError> {
        let Step { out, aggregate, replay } = step;
        for o in out {
            self.send(node, o)?;
        }
        let proc = &mut self.servers[node];
        for item in replay.into_iter().rev() {
            proc.queue.push_front(item);
        }
        if aggregate {
            self.events
                .push(self.now + self.spec.aggregation_ms, Payload::ServerDone { node, job: Job::Aggregate });
        } else {
            proc.busy = false;
            self.start_next(node);
        }
        self.audit_after(node);
        Ok(())
    }

    fn audit_after(&mut self, node: NodeId) {
        let Some(audit) = self.audit.as_mut() else {
            return;
        };
        let n = self.servers.len();
        if let ServerNode::SyncSpyker(s) = &mut self.servers[node].node {
            for (round, model) in s.take_folds() {
                let entry = audit.folds.entry(round).or_insert_with(|| (model.clone(), 0));
                if entry.0.as_slice() != model.as_slice() {
                    audit
                        .report
                        .violations
                        .push(format!("server {node} ended exchange {round} with a different model"));
                }
                entry.1 += 1;
                if entry.1 == n {
                    audit.folds.remove(&round);
                    audit.report.exchanges_checked += 1;
                }
            }
        }
    }

    fn check_token(&mut self) {
        if self.spec.algorithm != Algorithm::Spyker {
            return;
        }
        let Some(audit) = self.audit.as_mut() else {
            return;
        };
        let holders = self
            .servers
            .iter()
            .filter(|p| p.node.as_spyker().is_some_and(|s| s.has_token()))
            .count() as i64;
        if holders + audit.tokens_in_transit != 1 {
            audit.report.violations.push(format!(
                "t={}: {holders} holders and {} tokens in transit",
                self.now, audit.tokens_in_transit
            ));
        }
    }

    fn process(&mut self, seq: u64, payload: Payload<S>) -> Result<(), SimError> {
        self.hasher.update(self.now.to_bits().to_le_bytes());
        self.hasher.update(seq.to_le_bytes());
        match payload {
            Payload::Deliver { src, dst, msg } => {
                self.hasher.update([0u8]);
                self.hasher.update((src as u64).to_le_bytes());
                self.hasher.update((dst as u64).to_le_bytes());
                self.hasher.update([msg.kind() as u8]);
                if let Some(m) = msg.model() {
                    fingerprint(&mut self.hasher, m);
                }
                if self.is_client(dst) {
                    let idx = dst - self.servers.len();
                    let Message::ModelDispatch { model, age, lr } = &msg else {
                        return Err(self.protocol_error(
                            dst,
                            ProtocolError::Violation(format!("client {dst} got {}", msg.kind().as_str())),
                        ));
                    };
                    let (update, duration) = self.clients[idx]
                        .client_handle_dispatch(src, model, *age, *lr)
                        .map_err(|e| self.protocol_error(dst, e))?;
                    self.events
                        .push(self.now + duration, Payload::ClientDone { node: dst, msg: update });
                } else {
                    let proc = &mut self.servers[dst];
                    proc.queue.push_back((src, msg));
                    self.start_next(dst);
                    let proc = &mut self.servers[dst];
                    proc.peak = proc.peak.max(proc.queue.len());
                }
            }
            Payload::ClientDone { node, msg } => {
                self.hasher.update([1u8]);
                self.hasher.update((node as u64).to_le_bytes());
                let home = self.clients[node - self.servers.len()].home;
                self.send(node, Outgoing::new(home, msg))?;
            }
            Payload::ServerDone { node, job } => {
                self.hasher.update([2u8]);
                self.hasher.update((node as u64).to_le_bytes());
                let step = match job {
                    Job::Handle { from, msg } => {
                        let kind = msg.kind();
                        let bid = msg.bid();
                        if let (Some(audit), Message::TokenPass(_)) = (self.audit.as_mut(), &msg) {
                            audit.tokens_in_transit -= 1;
                        }
                        let buffered = self.servers[node].node.as_sync().is_some_and(|s| s.in_sync);
                        if kind == crate::protocol::MessageKind::ClientUpdate && self.is_client(from) && !buffered {
                            self.updates_processed += 1;
                            self.client_updates[from - self.servers.len()] += 1;
                        }
                        let step = self.servers[node]
                            .node
                            .handle(from, msg)
                            .map_err(|e| self.protocol_error(node, e))?;
                        self.hasher.update([kind as u8]);
                        self.write_trace(node, kind.as_str(), bid)?;
                        step
                    }
                    Job::Aggregate => {
                        let step = self.servers[node]
                            .node
                            .finish_aggregate()
                            .map_err(|e| self.protocol_error(node, e))?;
                        self.write_trace(node, "aggregate", None)?;
                        step
                    }
                };
                fingerprint(&mut self.hasher, self.servers[node].node.model());
                self.apply_step(node, step)?;
            }
        }
        self.check_token();
        Ok(())
    }

    fn queue_lens(&self) -> Vec<usize> {
        self.servers.iter().map(|p| p.queue.len()).collect()
    }

    /// Accuracy of the system model and, optionally, of every evaluated server.
    pub fn evaluate(&self) -> Result<(f64, Vec<f64>), SimError> {
        let acc_of = |m: &ModelVector<S>| -> Result<f64, SimError> {
            let model = TinyModel::new(self.shape, m.clone()).map_err(SimError::Model)?;
            model.accuracy(&self.test).map_err(SimError::Model)
        };
        let need_each = self.spec.per_server_accuracy || self.spec.eval_target == EvalTarget::Best;
        let each: Vec<f64> = if need_each {
            self.eval_nodes
                .iter()
                .map(|&n| acc_of(self.servers[n].node.model()))
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        let system = match self.spec.eval_target {
            EvalTarget::Best => each.iter().copied().fold(0.0, f64::max),
            EvalTarget::Server(i) => acc_of(self.servers[self.eval_nodes[i]].node.model())?,
            EvalTarget::AgeWeighted => acc_of(&self.system_model()?)?,
        };
        let each = if self.spec.per_server_accuracy { each } else { Vec::new() };
        Ok((system, each))
    }

    /// Age-weighted average of the evaluated server models (equal weights while all ages are zero).
    pub fn system_model(&self) -> Result<ModelVector<S>, SimError> {
        if self.eval_nodes.len() == 1 {
            return Ok(self.servers[self.eval_nodes[0]].node.model().clone());
        }
        let ages: Vec<f64> = self
            .eval_nodes
            .iter()
            .map(|&n| self.servers[n].node.age().0.as_f64())
            .collect();
        let total: f64 = ages.iter().sum();
        let weights: Vec<f64> = if total > 0.0 {
            ages.iter().map(|a| a / total).collect()
        } else {
            vec![1.0 / ages.len() as f64; ages.len()]
        };
        let dim = self.servers[self.eval_nodes[0]].node.model().dim();
        let mut acc = vec![S::zero(); dim];
        for (&n, &w) in self.eval_nodes.iter().zip(&weights) {
            let w = S::of_f64(w);
            for (a, &x) in acc.iter_mut().zip(self.servers[n].node.model().as_slice()) {
                *a += w * x;
            }
        }
        ModelVector::new(acc).map_err(SimError::Model)
    }

    fn eval_hook(&mut self, t: f64) -> Result<bool, SimError> {
        let now = self.now;
        self.now = t;
        let (accuracy, server_accuracy) = self.evaluate()?;
        self.now = now;
        self.rows.push(TimeRow {
            sim_time_ms: t,
            updates_processed: self.updates_processed,
            accuracy,
            server_accuracy,
            queue_len: self.queue_lens(),
        });
        Ok(self.spec.stop.target_accuracy.is_some_and(|target| accuracy >= target))
    }

    /// Sends the initial messages of every server. Called automatically by [`World::run`].
    pub fn start(&mut self) -> Result<(), SimError> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        for node in 0..self.servers.len() {
            let out = self.servers[node].node.start();
            for o in out {
                self.send(node, o)?;
            }
        }
        Ok(())
    }

    /// Runs until a stop condition holds or no events remain.
    pub fn run(mut self) -> Result<(RunMetrics, Vec<ServerNode<S>>), SimError> {
        self.start()?;
        let horizon = self.spec.stop.horizon_ms;
        let eval_dt = self.spec.eval_interval_ms;
        let stop = 'outer: loop {
            let Some(next) = self.events.peek_time() else {
                break StopReason::Exhausted;
            };
            // hooks strictly before the next event, never past the horizon
            loop {
                let te = self.next_eval as f64 * eval_dt;
                let tq = self
                    .spec
                    .queue_sample_ms
                    .map_or(f64::INFINITY, |dt| self.next_queue_sample as f64 * dt);
                let t = te.min(tq);
                if !(t < next && t <= horizon) {
                    break;
                }
                if tq <= te {
                    self.queue_samples.push(QueueSample {
                        sim_time_ms: tq,
                        queue_len: self.queue_lens(),
                    });
                    self.next_queue_sample += 1;
                } else {
                    self.next_eval += 1;
                    if self.eval_hook(te)? {
                        self.now = te;
                        break 'outer StopReason::TargetAccuracy;
                    }
                }
            }
            if next > horizon {
                self.now = horizon;
                break StopReason::Horizon;
            }
            let ev = self.events.pop().expect("peeked");
            self.now = ev.time;
            self.events_processed += 1;
            self.process(ev.seq, ev.payload)?;
            if self.spec.stop.max_updates.is_some_and(|m| self.updates_processed >= m) {
                break StopReason::MaxUpdates;
            }
        };
        if let Some(sink) = self.trace.as_mut() {
            sink.flush().map_err(|e| SimError::Io(e.to_string()))?;
        }
        let metrics = RunMetrics {
            rows: self.rows,
            queue_samples: self.queue_samples,
            queue_peaks: self.servers.iter().map(|p| p.peak).collect(),
            client_updates: self.client_updates,
            all_bytes: self.link.all_bytes.clone(),
            window_bytes: self.link.window_bytes.clone(),
            updates_processed: self.updates_processed,
            events_processed: self.events_processed,
            end_time_ms: self.now,
            stop,
            trace_hash: hex::encode(self.hasher.finalize()),
            audit: self.audit.map(|a| a.report),
        };
        Ok((metrics, self.servers.into_iter().map(|p| p.node).collect()))
    }
}

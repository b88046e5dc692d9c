use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Latencies in milliseconds between labelled locations, row = source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyMatrix {
    pub labels: Vec<String>,
    pub ms: Vec<Vec<f64>>,
}

pub const REGIONS: [&str; 4] = ["Hongkong", "Paris", "Sydney", "California"];

impl LatencyMatrix {
    /// Measured inter-region delays, asymmetric as recorded.
    pub fn regions() -> Self {
        Self {
            labels: REGIONS.iter().map(|s| s.to_string()).collect(),
            ms: vec![
                vec![1.41, 194.9, 132.28, 155.13],
                vec![197.91, 0.9, 278.83, 142.25],
                vec![132.06, 280.11, 2.56, 138.47],
                vec![154.96, 142.79, 138.57, 2.14],
            ],
        }
    }

    /// Same labels with every entry replaced by the mean of all entries.
    pub fn flattened(&self) -> Self {
        let n: usize = self.ms.iter().map(Vec::len).sum();
        let mean = self.ms.iter().flatten().sum::<f64>() / n as f64;
        Self {
            labels: self.labels.clone(),
            ms: self.ms.iter().map(|row| vec![mean; row.len()]).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.labels.len();
        if n == 0 || self.ms.len() != n || self.ms.iter().any(|r| r.len() != n) {
            return Err(SimError::Config(format!(
                "latency matrix must be {n}x{n} to match its labels"
            )));
        }
        if self.ms.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(SimError::Config("latencies must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn index_of(&self, label: &str) -> Result<usize, SimError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| SimError::Config(format!("location `{label}` is not in the latency matrix")))
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.ms[from][to]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkClass {
    ServerServer,
    ServerClient,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteCounters {
    pub server_server: u64,
    pub server_client: u64,
    pub messages: u64,
}

impl ByteCounters {
    pub fn add(&mut self, class: LinkClass, bytes: u64) {
        match class {
            LinkClass::ServerServer => self.server_server += bytes,
            LinkClass::ServerClient => self.server_client += bytes,
        }
        self.messages += 1;
    }

    pub fn total(&self) -> u64 {
        self.server_server + self.server_client
    }
}

/// Interval of send times counted in the windowed byte totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ByteWindow {
    pub start_ms: f64,
    /// `None` leaves the window open-ended.
    pub length_ms: Option<f64>,
}

impl Default for ByteWindow {
    fn default() -> Self {
        Self {
            start_ms: 0.0,
            length_ms: None,
        }
    }
}

impl ByteWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_ms && self.length_ms.is_none_or(|len| t < self.start_ms + len)
    }
}

/// Point-to-point links with location-based latency, a fixed bandwidth and FIFO delivery.
#[derive(Debug, Clone)]
pub struct LinkModel {
    matrix: LatencyMatrix,
    location_of: Vec<usize>,
    is_client: Vec<bool>,
    bandwidth_bps: f64,
    last_delivery: HashMap<(usize, usize), f64>,
    window: ByteWindow,
    /// Every byte ever sent.
    pub all_bytes: ByteCounters,
    /// Bytes whose send time lies in the window.
    pub window_bytes: ByteCounters,
}

impl LinkModel {
    pub fn new(
        matrix: LatencyMatrix,
        location_of: Vec<usize>,
        is_client: Vec<bool>,
        bandwidth_bps: f64,
        window: ByteWindow,
    ) -> Result<Self, SimError> {
        matrix.validate()?;
        if location_of.len() != is_client.len() {
            return Err(SimError::Config("every node needs a location and a role".into()));
        }
        if let Some(&bad) = location_of.iter().find(|&&l| l >= matrix.labels.len()) {
            return Err(SimError::Config(format!("location index {bad} outside the latency matrix")));
        }
        if !(bandwidth_bps > 0.0) {
            return Err(SimError::Config("bandwidth must be positive".into()));
        }
        Ok(Self {
            matrix,
            location_of,
            is_client,
            bandwidth_bps,
            last_delivery: HashMap::new(),
            window,
            all_bytes: ByteCounters::default(),
            window_bytes: ByteCounters::default(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.location_of.len()
    }

    pub fn latency(&self, src: usize, dst: usize) -> f64 {
        self.matrix.get(self.location_of[src], self.location_of[dst])
    }

    pub fn transfer_ms(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / self.bandwidth_bps * 1000.0
    }

    pub fn class(&self, src: usize, dst: usize) -> LinkClass {
        if self.is_client[src] || self.is_client[dst] {
            LinkClass::ServerClient
        } else {
            LinkClass::ServerServer
        }
    }

    /// Delivery time of a `bytes`-sized message sent now; updates FIFO state and byte counters.
    pub fn send(&mut self, src: usize, dst: usize, bytes: u64, now: f64) -> Result<f64, SimError> {
        let n = self.n_nodes();
        if src >= n || dst >= n {
            return Err(SimError::Config(format!("unknown node in send {src} -> {dst}")));
        }
        if src == dst {
            return Err(SimError::Config(format!("node {src} cannot send to itself")));
        }
        let raw = now + self.latency(src, dst) + self.transfer_ms(bytes);
        let last = self.last_delivery.entry((src, dst)).or_insert(f64::NEG_INFINITY);
        let at = raw.max(*last);
        *last = at;
        let class = self.class(src, dst);
        self.all_bytes.add(class, bytes);
        if self.window.contains(now) {
            self.window_bytes.add(class, bytes);
        }
        Ok(at)
    }
}

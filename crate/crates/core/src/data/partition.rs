//! Label-skewed (non-iid) client partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub labels_per_client: usize,
    pub seed: u64,
}

/// Row indices owned by each client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Vec<usize>>,
    /// Label set of each client, ascending.
    pub labels: Vec<Vec<usize>>,
}

impl Partition {
    pub fn materialize(&self, data: &Dataset) -> Result<Vec<Dataset>, DataError> {
        self.shards.iter().map(|idx| data.subset(idx)).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Vec::len).collect()
    }
}

/// Assigns `l` labels per client and splits each label's rows among its clients.
///
/// Labels are visited in a seeded order and dealt round-robin, so every label is
/// used before any repeats. Each label's rows are shuffled and split as evenly as
/// possible; leftover rows go to the currently smallest shards. With
/// class-balanced data and `n_clients * l` divisible by the class count, shard
/// sizes differ by at most one.
pub fn partition_noniid(data: &Dataset, spec: &PartitionSpec) -> Result<Partition, DataError> {
    let present = data.label_set();
    let k = present.len();
    let l = spec.labels_per_client;
    if spec.n_clients == 0 {
        return Err(DataError::Infeasible("n_clients must be at least 1".into()));
    }
    if l == 0 || l > k {
        return Err(DataError::Infeasible(format!(
            "labels_per_client = {l} must lie in [1, {k}] (classes present)"
        )));
    }
    if spec.n_clients * l < k {
        return Err(DataError::Infeasible(format!(
            "n_clients * labels_per_client = {} cannot cover {k} classes",
            spec.n_clients * l
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order = present.clone();
    order.shuffle(&mut rng);

    let client_labels: Vec<Vec<usize>> = (0..spec.n_clients)
        .map(|c| {
            let mut ls: Vec<usize> = (0..l).map(|j| order[(c * l + j) % k]).collect();
            ls.sort_unstable();
            ls
        })
        .collect();

    let mut rows_by_label: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for i in 0..data.len() {
        rows_by_label[data.label(i)].push(i);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    for &label in &present {
        let holders: Vec<usize> = (0..spec.n_clients)
            .filter(|&c| client_labels[c].contains(&label))
            .collect();
        let mut rows = std::mem::take(&mut rows_by_label[label]);
        if rows.len() < holders.len() {
            return Err(DataError::Infeasible(format!(
                "label {label} has {} rows but {} clients need it",
                rows.len(),
                holders.len()
            )));
        }
        rows.shuffle(&mut rng);
        let base = rows.len() / holders.len();
        let extra = rows.len() % holders.len();
        // extras to the smallest shards so far, ties by client id
        let mut by_size = holders.clone();
        by_size.sort_by_key(|&c| (shards[c].len(), c));
        let lucky = &by_size[..extra];
        let mut start = 0;
        for &c in &holders {
            let take = base + usize::from(lucky.contains(&c));
            shards[c].extend_from_slice(&rows[start..start + take]);
            start += take;
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(Partition {
        shards,
        labels: client_labels,
    })
}

/// The first `per_class` rows of every class, in file order.
pub fn balanced_subset(data: &Dataset, per_class: usize) -> Result<Dataset, DataError> {
    let mut taken = vec![0usize; data.n_classes()];
    let mut idx = Vec::new();
    for i in 0..data.len() {
        let l = data.label(i);
        if taken[l] < per_class {
            taken[l] += 1;
            idx.push(i);
        }
    }
    if let Some(short) = taken.iter().position(|&t| t < per_class) {
        return Err(DataError::Infeasible(format!(
            "class {short} has only {} rows, {per_class} requested",
            taken[short]
        )));
    }
    data.subset(&idx)
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{HyperParams, ModelKind, ModelShape};
use crate::protocol::{Algorithm, WireFormat};
use crate::scalar::Precision;
use crate::sim::{ByteWindow, ComputeProfile, EvalTarget, LatencyMatrix, StopCondition, REGIONS};

use super::ExperimentError;

/// How clients are spread over the servers, in contiguous blocks of client ids.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assignment {
    #[default]
    Balanced,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyPreset {
    /// Measured inter-region matrix.
    #[default]
    Regions,
    /// Every entry equal to the mean of the measured matrix.
    Uniform,
    /// The matrix given in `latency.matrix`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    pub preset: LatencyPreset,
    pub matrix: Option<LatencyMatrix>,
}

impl LatencyConfig {
    pub fn resolve(&self) -> Result<LatencyMatrix, ExperimentError> {
        let m = match self.preset {
            LatencyPreset::Regions => LatencyMatrix::regions(),
            LatencyPreset::Uniform => LatencyMatrix::regions().flattened(),
            LatencyPreset::Custom => self
                .matrix
                .clone()
                .ok_or_else(|| ExperimentError::config("latency.matrix", "required when latency.preset = \"custom\""))?,
        };
        m.validate().map_err(|e| ExperimentError::config("latency", e.to_string()))?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        n_samples: usize,
        dim: usize,
        n_classes: usize,
        separation: f64,
        #[serde(default = "default_blob_std")]
        blob_std: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// IDX files `train-images-idx3-ubyte` etc. in `dir`, or under the data root.
    Mnist {
        dir: Option<PathBuf>,
        /// Training rows kept per class; `None` keeps everything.
        train_per_class: Option<usize>,
        /// Test rows kept per class; `None` keeps everything.
        test_per_class: Option<usize>,
    },
    /// Binary batches `data_batch_1.bin` .. `data_batch_5.bin` and `test_batch.bin`.
    Cifar {
        dir: Option<PathBuf>,
        train_per_class: Option<usize>,
        test_per_class: Option<usize>,
    },
}

fn default_blob_std() -> f64 {
    1.0
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            n_samples: 2000,
            dim: 2,
            n_classes: 2,
            separation: 3.0,
            blob_std: 1.0,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub labels_per_client: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { labels_per_client: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            hidden_dim: 64,
        }
    }
}

impl ModelConfig {
    pub fn shape(&self, input_dim: usize, n_classes: usize) -> ModelShape {
        match self.kind {
            ModelKind::LogisticRegression => ModelShape::logistic(input_dim, n_classes),
            ModelKind::Mlp1Hidden => ModelShape::mlp(input_dim, self.hidden_dim, n_classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedAvgConfig {
    pub client_fraction: f64,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        Self { client_fraction: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierConfig {
    /// Edge rounds between two cloud aggregations.
    pub period: u64,
}

impl Default for HierConfig {
    fn default() -> Self {
        Self { period: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    /// Age growth between exchanges; `None` uses `hyper.h_intra`.
    pub period: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Every server starts from the same seeded random model.
    #[default]
    Shared,
    /// Each server draws its own initial model.
    Independent,
}

/// Fixed per-epoch training time for one client, replacing its random draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayOverride {
    pub client: usize,
    pub per_epoch_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub algorithm: Algorithm,
    pub precision: Precision,
    pub seed: u64,
    pub n_servers: usize,
    pub n_clients: usize,
    pub assignment: Assignment,
    /// Location label of each server; empty takes the first `n_servers` regions.
    pub locations: Vec<String>,
    /// Where single-server systems and the hierarchical cloud run.
    pub central_location: String,
    pub latency: LatencyConfig,
    pub bandwidth_mbps: f64,
    pub compute: ComputeProfile,
    pub client_delay_overrides: Vec<DelayOverride>,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub model: ModelConfig,
    pub hyper: HyperParams,
    pub fedavg: FedAvgConfig,
    pub hierfavg: HierConfig,
    pub sync_spyker: SyncConfig,
    pub initial_model: InitMode,
    pub stop: StopCondition,
    pub eval_interval_ms: f64,
    pub queue_sample_ms: Option<f64>,
    pub eval_target: EvalTarget,
    pub per_server_accuracy: bool,
    /// Accuracy levels reported in the summary.
    pub thresholds: Vec<f64>,
    pub bandwidth_window: ByteWindow,
    pub wire: WireFormat,
    /// Check protocol invariants during the run.
    pub audit: bool,
}

impl Default for StopCondition {
    fn default() -> Self {
        Self {
            horizon_ms: 60_000.0,
            target_accuracy: None,
            max_updates: None,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            algorithm: Algorithm::Spyker,
            precision: Precision::F64,
            seed: 1,
            n_servers: 4,
            n_clients: 100,
            assignment: Assignment::Balanced,
            locations: Vec::new(),
            central_location: "California".into(),
            latency: LatencyConfig::default(),
            bandwidth_mbps: 100.0,
            compute: ComputeProfile::default(),
            client_delay_overrides: Vec::new(),
            dataset: DatasetConfig::default(),
            partition: PartitionConfig::default(),
            model: ModelConfig::default(),
            hyper: HyperParams::default(),
            fedavg: FedAvgConfig::default(),
            hierfavg: HierConfig::default(),
            sync_spyker: SyncConfig::default(),
            initial_model: InitMode::Shared,
            stop: StopCondition::default(),
            eval_interval_ms: 1000.0,
            queue_sample_ms: None,
            eval_target: EvalTarget::AgeWeighted,
            per_server_accuracy: false,
            thresholds: vec![0.85, 0.9, 0.95],
            bandwidth_window: ByteWindow::default(),
            wire: WireFormat::default(),
            audit: false,
        }
    }
}

const PRESETS: [(&str, &str); 3] = [
    ("table", include_str!("../../presets/table.toml")),
    ("desk-synth", include_str!("../../presets/desk-synth.toml")),
    ("desk-mnist", include_str!("../../presets/desk-mnist.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

fn preset_table(name: &str) -> Result<toml::Table, ExperimentError> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        ExperimentError::config("preset", format!("unknown preset `{name}`, expected one of {:?}", preset_names()))
    })?;
    toml::from_str(text).map_err(|e| ExperimentError::config("preset", format!("{name}: {e}")))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses the right-hand side of `key=value`: a TOML literal, or a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies a dotted `a.b.c=value` override to a table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ExperimentError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ExperimentError::config(spec, "override must look like key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ExperimentError::config(key, "empty path segment"));
    }
    let mut cur = table;
    for seg in &path[..path.len() - 1] {
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ExperimentError::config(key, format!("`{seg}` is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Resolves `preset`, the document itself and the overrides, in that order.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        let doc: toml::Table = toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
        Self::from_table(doc, overrides)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    /// A preset with overrides applied.
    pub fn preset(name: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut t = toml::Table::new();
        t.insert("preset".into(), toml::Value::String(name.into()));
        Self::from_table(t, overrides)
    }

    pub fn from_table(mut doc: toml::Table, overrides: &[String]) -> Result<Self, ExperimentError> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut table = match doc.remove("preset") {
            Some(toml::Value::String(name)) => preset_table(&name)?,
            Some(_) => return Err(ExperimentError::config("preset", "must be a string")),
            None => toml::Table::new(),
        };
        merge(&mut table, doc);
        let cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ExperimentError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Server location labels after defaulting.
    pub fn server_locations(&self) -> Vec<String> {
        if self.locations.is_empty() {
            (0..self.n_servers).map(|i| REGIONS[i % REGIONS.len()].to_string()).collect()
        } else {
            self.locations.clone()
        }
    }

    /// Clients per server.
    pub fn client_counts(&self) -> Vec<usize> {
        match &self.assignment {
            Assignment::Balanced => {
                let (q, r) = (self.n_clients / self.n_servers, self.n_clients % self.n_servers);
                (0..self.n_servers).map(|i| q + usize::from(i < r)).collect()
            }
            Assignment::Explicit(c) => c.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        fn err(field: &str, msg: impl Into<String>) -> ExperimentError {
            ExperimentError::config(field, msg)
        }
        if self.n_servers == 0 {
            return Err(err("n_servers", "must be at least 1"));
        }
        if let Assignment::Explicit(c) = &self.assignment {
            if c.len() != self.n_servers {
                return Err(err("assignment", format!("{} counts for {} servers", c.len(), self.n_servers)));
            }
            if c.iter().sum::<usize>() != self.n_clients {
                return Err(err(
                    "assignment",
                    format!("counts sum to {} but n_clients = {}", c.iter().sum::<usize>(), self.n_clients),
                ));
            }
        }
        if self.n_clients == 0 && matches!(self.algorithm, Algorithm::FedAvg | Algorithm::HierFavg) {
            return Err(err("n_clients", "round-based systems need at least one client"));
        }
        if self.algorithm == Algorithm::HierFavg && self.client_counts().contains(&0) {
            return Err(err("assignment", "every edge server needs at least one client"));
        }
        let matrix = self.latency.resolve()?;
        let locs = self.server_locations();
        if locs.len() != self.n_servers {
            return Err(err("locations", format!("{} labels for {} servers", locs.len(), self.n_servers)));
        }
        for l in locs.iter().chain(std::iter::once(&self.central_location)) {
            matrix.index_of(l).map_err(|e| err("locations", e.to_string()))?;
        }
        if !(self.bandwidth_mbps > 0.0) {
            return Err(err("bandwidth_mbps", "must be positive"));
        }
        self.compute.validate().map_err(|e| err("compute", e.to_string()))?;
        for o in &self.client_delay_overrides {
            if o.client >= self.n_clients || !(o.per_epoch_ms > 0.0) {
                return Err(err("client_delay_overrides", format!("bad entry for client {}", o.client)));
            }
        }
        self.hyper.validate().map_err(|e| err("hyper", e.to_string()))?;
        if !(self.fedavg.client_fraction > 0.0 && self.fedavg.client_fraction <= 1.0) {
            return Err(err("fedavg.client_fraction", "must lie in (0, 1]"));
        }
        if self.hierfavg.period == 0 {
            return Err(err("hierfavg.period", "must be at least 1"));
        }
        if matches!(self.sync_spyker.period, Some(p) if !(p > 0.0)) {
            return Err(err("sync_spyker.period", "must be positive"));
        }
        if !(self.stop.horizon_ms > 0.0 && self.stop.horizon_ms.is_finite()) {
            return Err(err("stop.horizon_ms", "must be positive and finite"));
        }
        if matches!(self.stop.target_accuracy, Some(a) if !(0.0..=1.0).contains(&a)) {
            return Err(err("stop.target_accuracy", "must lie in [0, 1]"));
        }
        if !(self.eval_interval_ms > 0.0) {
            return Err(err("eval_interval_ms", "must be positive"));
        }
        if matches!(self.queue_sample_ms, Some(q) if !(q > 0.0)) {
            return Err(err("queue_sample_ms", "must be positive"));
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(err("thresholds", "must lie in [0, 1]"));
        }
        if let EvalTarget::Server(i) = self.eval_target {
            if i >= self.n_servers {
                return Err(err("eval_target", format!("server {i} does not exist")));
            }
        }
        if self.model.kind == ModelKind::Mlp1Hidden && self.model.hidden_dim == 0 {
            return Err(err("model.hidden_dim", "must be positive"));
        }
        if self.partition.labels_per_client == 0 {
            return Err(err("partition.labels_per_client", "must be at least 1"));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                n_samples,
                dim,
                n_classes,
                separation,
                test_fraction,
                ..
            } => {
                if *n_classes < 2 || *dim == 0 || *n_samples < 2 * n_classes || !(*separation > 0.0) {
                    return Err(err("dataset", "synthetic data needs n_classes >= 2, dim >= 1, separation > 0"));
                }
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(err("dataset.test_fraction", "must lie in (0, 1)"));
                }
            }
            DatasetConfig::Mnist {
                train_per_class,
                test_per_class,
                ..
            }
            | DatasetConfig::Cifar {
                train_per_class,
                test_per_class,
                ..
            } => {
                if *train_per_class == Some(0) || *test_per_class == Some(0) {
                    return Err(err("dataset", "per-class limits must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Hash of the resolved configuration with the client assignment left out.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("assignment");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            ExperimentConfig::preset(name, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = ExperimentConfig::preset(
            "desk-synth",
            &["hyper.eta_init=0.2".into(), "algorithm=fedasync".into(), "n_clients=8".into()],
        )
        .unwrap();
        assert_eq!(cfg.hyper.eta_init, 0.2);
        assert_eq!(cfg.algorithm, Algorithm::FedAsync);
        assert_eq!(cfg.n_clients, 8);
    }

    #[test]
    fn unknown_field_is_named() {
        let e = ExperimentConfig::from_toml_str("preset = \"desk-synth\"\nbogus_field = 3\n", &[]).unwrap_err();
        assert!(e.to_string().contains("bogus_field"), "{e}");
        let e = ExperimentConfig::preset("desk-synth", &["hyper.phi_typo=1".into()]).unwrap_err();
        assert!(e.to_string().contains("phi_typo"), "{e}");
    }

    #[test]
    fn balanced_and_explicit_counts() {
        let cfg = ExperimentConfig::preset("table", &[]).unwrap();
        assert_eq!(cfg.client_counts(), vec![25, 25, 25, 25]);
        let cfg =
            ExperimentConfig::preset("table", &["assignment={explicit=[70,10,10,10]}".into()]).unwrap();
        assert_eq!(cfg.client_counts(), vec![70, 10, 10, 10]);
        let bad = ExperimentConfig::preset("table", &["assignment={explicit=[70,10,10]}".into()]);
        assert!(bad.unwrap_err().to_string().contains("assignment"));
    }

    #[test]
    fn unknown_location_rejected() {
        let e = ExperimentConfig::preset("desk-synth", &["central_location=\"Tokyo\"".into()]).unwrap_err();
        assert!(e.to_string().contains("Tokyo"));
    }

    #[test]
    fn hash_ignores_assignment_only() {
        let a = ExperimentConfig::preset("table", &[]).unwrap();
        let b = ExperimentConfig::preset("table", &["assignment={explicit=[70,10,10,10]}".into()]).unwrap();
        let c = ExperimentConfig::preset("table", &["seed=2".into()]).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn toml_round_trip() {
        let a = ExperimentConfig::preset("desk-mnist", &[]).unwrap();
        let b = ExperimentConfig::from_toml_str(&a.to_toml_string(), &[]).unwrap();
        assert_eq!(a, b);
    }
}

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::protocol::Algorithm;
use crate::scalar::{Precision, Scalar};
use crate::sim::{AuditReport, ByteCounters, QueueSample, RunManifest, StopReason, TimeRow};

use super::build::build_world;
use super::config::ExperimentConfig;
use super::ExperimentError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write the event trace as JSON lines here.
    pub trace: Option<PathBuf>,
}

/// Updates absorbed from one client over a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientCount {
    pub client: usize,
    /// Index of the server group the client belongs to.
    pub server: usize,
    pub updates: u64,
}

/// First eval hook at or above an accuracy threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHit {
    pub threshold: f64,
    pub time_ms: Option<f64>,
    pub updates: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub algorithm: Algorithm,
    pub n_servers: usize,
    pub n_clients: usize,
    pub seed: u64,
    pub stop_reason: StopReason,
    pub end_time_ms: f64,
    pub updates_processed: u64,
    pub events_processed: u64,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub thresholds: Vec<ThresholdHit>,
    pub time_to_90: Option<f64>,
    pub time_to_95: Option<f64>,
    pub updates_to_90: Option<u64>,
    pub bytes: ByteCounters,
    pub window_bytes: ByteCounters,
    pub queue_peaks: Vec<usize>,
    pub trace_hash: String,
}

impl Summary {
    /// First eval time at which accuracy reached `threshold`, from the rows.
    pub fn first_hit(rows: &[TimeRow], threshold: f64) -> ThresholdHit {
        let row = rows.iter().find(|r| r.accuracy >= threshold);
        ThresholdHit {
            threshold,
            time_ms: row.map(|r| r.sim_time_ms),
            updates: row.map(|r| r.updates_processed),
        }
    }

    pub fn time_to(&self, threshold: f64) -> Option<f64> {
        self.thresholds.iter().find(|h| h.threshold == threshold).and_then(|h| h.time_ms)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFrame {
    pub rows: Vec<TimeRow>,
    pub client_updates: Vec<ClientCount>,
    pub queue_samples: Vec<QueueSample>,
    pub queue_peaks: Vec<usize>,
    pub all_bytes: ByteCounters,
    pub window_bytes: ByteCounters,
    /// Present when the run was audited.
    pub audit: Option<AuditReport>,
    pub summary: Summary,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub manifest: RunManifest,
    pub frame: MetricsFrame,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    run_experiment_with(cfg, &RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput, ExperimentError> {
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, opts),
        Precision::F64 => run_typed::<f64>(cfg, opts),
    }
}

fn run_typed<S: Scalar>(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput, ExperimentError> {
    let prepared = build_world::<S>(cfg)?;
    let mut world = prepared.world;
    if let Some(path) = &opts.trace {
        let file = File::create(path).map_err(|e| ExperimentError::io(path.display(), e))?;
        world.set_trace(Box::new(BufWriter::new(file)));
    }
    log::info!(
        "running {} ({}, {} servers, {} clients, seed {})",
        cfg.name,
        cfg.algorithm,
        cfg.n_servers,
        cfg.n_clients,
        cfg.seed
    );
    let (metrics, _) = world.run()?;

    let client_updates = metrics
        .client_updates
        .iter()
        .enumerate()
        .map(|(k, &updates)| ClientCount {
            client: k,
            server: prepared.client_server[k],
            updates,
        })
        .collect();
    let thresholds: Vec<ThresholdHit> = cfg.thresholds.iter().map(|&t| Summary::first_hit(&metrics.rows, t)).collect();
    let hit90 = Summary::first_hit(&metrics.rows, 0.9);
    let summary = Summary {
        name: cfg.name.clone(),
        algorithm: cfg.algorithm,
        n_servers: cfg.n_servers,
        n_clients: cfg.n_clients,
        seed: cfg.seed,
        stop_reason: metrics.stop,
        end_time_ms: metrics.end_time_ms,
        updates_processed: metrics.updates_processed,
        events_processed: metrics.events_processed,
        final_accuracy: metrics.rows.last().map(|r| r.accuracy),
        best_accuracy: metrics.rows.iter().map(|r| r.accuracy).reduce(f64::max),
        thresholds,
        time_to_90: hit90.time_ms,
        time_to_95: Summary::first_hit(&metrics.rows, 0.95).time_ms,
        updates_to_90: hit90.updates,
        bytes: metrics.all_bytes.clone(),
        window_bytes: metrics.window_bytes.clone(),
        queue_peaks: metrics.queue_peaks.clone(),
        trace_hash: metrics.trace_hash.clone(),
    };
    log::info!(
        "{} finished at {:.0} ms after {} updates, final accuracy {:?}",
        cfg.name,
        summary.end_time_ms,
        summary.updates_processed,
        summary.final_accuracy
    );
    Ok(RunOutput {
        config: cfg.clone(),
        manifest: prepared.manifest,
        frame: MetricsFrame {
            rows: metrics.rows,
            client_updates,
            queue_samples: metrics.queue_samples,
            queue_peaks: metrics.queue_peaks,
            all_bytes: metrics.all_bytes,
            window_bytes: metrics.window_bytes,
            audit: metrics.audit,
            summary,
        },
    })
}

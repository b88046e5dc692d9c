//! Multi-run experiments built on top of single runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::protocol::Algorithm;
use crate::sim::{ByteWindow, QueueSample, TimeRow};

use super::config::{Assignment, ExperimentConfig};
use super::run::{run_experiment, ClientCount, RunOutput, Summary};
use super::ExperimentError;

/// Runs independent configurations on up to `jobs` threads; results keep input order.
pub fn run_many(cfgs: &[ExperimentConfig], jobs: usize) -> Vec<Result<RunOutput, ExperimentError>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutput, ExperimentError>>>> =
        Mutex::new((0..cfgs.len()).map(|_| None).collect());
    let workers = jobs.clamp(1, cfgs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = cfgs.get(i) else { break };
                let result = run_experiment(cfg);
                slots.lock().expect("result lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

fn collect(results: Vec<Result<RunOutput, ExperimentError>>) -> Result<Vec<RunOutput>, ExperimentError> {
    results.into_iter().collect()
}

/// Median where `None` means "never happened" and sorts above every value.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub algorithm: Algorithm,
    pub n_clients: usize,
    /// Time to threshold per seed, `None` when not reached within the horizon.
    pub times_ms: Vec<Option<f64>>,
    pub median_time_ms: Option<f64>,
    pub median_updates: Option<f64>,
    /// Relative to the base client count; `None` means unreached.
    pub time_multiplier: Option<f64>,
    pub update_multiplier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityTable {
    pub threshold: f64,
    pub base_clients: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<ScalabilityRow>,
}

impl ScalabilityTable {
    pub fn row(&self, algorithm: Algorithm, n_clients: usize) -> Option<&ScalabilityRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.n_clients == n_clients)
    }
}

/// Time and update multipliers to reach `threshold` as the client count grows.
pub fn scalability_suite(
    base: &ExperimentConfig,
    algorithms: &[Algorithm],
    counts: &[usize],
    seeds: &[u64],
    threshold: f64,
    jobs: usize,
) -> Result<ScalabilityTable, ExperimentError> {
    if !counts.contains(&base.n_clients) {
        return Err(ExperimentError::config(
            "n_clients",
            format!("client counts {counts:?} must include the base count {}", base.n_clients),
        ));
    }
    if seeds.is_empty() {
        return Err(ExperimentError::config("seed", "at least one seed is required"));
    }
    let mut cells = Vec::new();
    for &alg in algorithms {
        for &n in counts {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.algorithm = alg;
                cfg.n_clients = n;
                cfg.assignment = Assignment::Balanced;
                cfg.seed = seed;
                cfg.stop.target_accuracy = Some(threshold);
                cells.push(cfg);
            }
        }
    }
    let outs = collect(run_many(&cells, jobs))?;
    let mut rows = Vec::new();
    let mut chunks = outs.chunks(seeds.len());
    for &alg in algorithms {
        let mut alg_rows = Vec::new();
        for &n in counts {
            let runs = chunks.next().expect("one chunk per cell group");
            let hits: Vec<_> = runs
                .iter()
                .map(|o| Summary::first_hit(&o.frame.rows, threshold))
                .collect();
            let times: Vec<Option<f64>> = hits.iter().map(|h| h.time_ms).collect();
            let updates: Vec<Option<f64>> = hits.iter().map(|h| h.updates.map(|u| u as f64)).collect();
            alg_rows.push(ScalabilityRow {
                algorithm: alg,
                n_clients: n,
                median_time_ms: median(&times),
                median_updates: median(&updates),
                times_ms: times,
                time_multiplier: None,
                update_multiplier: None,
            });
        }
        let base_row = alg_rows
            .iter()
            .find(|r| r.n_clients == base.n_clients)
            .cloned()
            .expect("base count present");
        let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        for r in &mut alg_rows {
            r.time_multiplier = ratio(r.median_time_ms, base_row.median_time_ms);
            r.update_multiplier = ratio(r.median_updates, base_row.median_updates);
        }
        rows.extend(alg_rows);
    }
    Ok(ScalabilityTable {
        threshold,
        base_clients: base.n_clients,
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueTrace {
    pub algorithm: Algorithm,
    pub samples: Vec<QueueSample>,
    /// Exact maximum ingress queue length of each server over the run.
    pub peaks: Vec<usize>,
}

/// Default sampling period when the config leaves queue sampling off.
const QUEUE_SAMPLE_MS: f64 = 100.0;

pub fn queue_trace(cfg: &ExperimentConfig) -> Result<(QueueTrace, RunOutput), ExperimentError> {
    if !matches!(cfg.algorithm, Algorithm::Spyker | Algorithm::FedAsync) {
        return Err(ExperimentError::config(
            "algorithm",
            "queue traces are defined for spyker and fedasync",
        ));
    }
    let mut cfg = cfg.clone();
    cfg.queue_sample_ms.get_or_insert(QUEUE_SAMPLE_MS);
    let out = run_experiment(&cfg)?;
    let trace = QueueTrace {
        algorithm: cfg.algorithm,
        samples: out.frame.queue_samples.clone(),
        peaks: out.frame.queue_peaks.clone(),
    };
    Ok((trace, out))
}

pub fn update_histogram(cfg: &ExperimentConfig) -> Result<(Vec<ClientCount>, RunOutput), ExperimentError> {
    if !cfg.algorithm.is_asynchronous() {
        return Err(ExperimentError::config(
            "algorithm",
            format!("update histograms need an asynchronous algorithm, not {}", cfg.algorithm),
        ));
    }
    let out = run_experiment(cfg)?;
    Ok((out.frame.client_updates.clone(), out))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub algorithm: Algorithm,
    pub server_server: u64,
    pub server_client: u64,
    pub total: u64,
}

/// Bytes sent inside `[start, start + length)` for each algorithm on otherwise identical configs.
pub fn bandwidth_report(
    base: &ExperimentConfig,
    algorithms: &[Algorithm],
    window: ByteWindow,
    jobs: usize,
) -> Result<Vec<BandwidthRow>, ExperimentError> {
    let length = window
        .length_ms
        .ok_or_else(|| ExperimentError::config("bandwidth_window.length_ms", "a bandwidth report needs a finite window"))?;
    let cells: Vec<ExperimentConfig> = algorithms
        .iter()
        .map(|&alg| {
            let mut cfg = base.clone();
            cfg.algorithm = alg;
            cfg.bandwidth_window = window;
            cfg.stop.horizon_ms = window.start_ms + length;
            cfg.stop.target_accuracy = None;
            cfg.stop.max_updates = None;
            cfg
        })
        .collect();
    let outs = collect(run_many(&cells, jobs))?;
    Ok(outs
        .iter()
        .map(|o| {
            let b = &o.frame.window_bytes;
            BandwidthRow {
                algorithm: o.config.algorithm,
                server_server: b.server_server,
                server_client: b.server_client,
                total: b.total(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayArm {
    pub seed: u64,
    pub decay_enabled: bool,
    pub rows: Vec<TimeRow>,
    pub time_to_target_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayAblation {
    pub target: f64,
    pub on: Vec<DecayArm>,
    pub off: Vec<DecayArm>,
    pub median_on_ms: Option<f64>,
    pub median_off_ms: Option<f64>,
}

/// Paired runs per seed with decay enabled and disabled.
pub fn decay_ablation(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    target: f64,
    jobs: usize,
) -> Result<DecayAblation, ExperimentError> {
    if cfg.algorithm != Algorithm::Spyker {
        return Err(ExperimentError::config("algorithm", "decay ablation runs spyker only"));
    }
    let mut cells = Vec::new();
    for &enabled in &[true, false] {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.hyper.decay_enabled = enabled;
            cells.push(c);
        }
    }
    let outs = collect(run_many(&cells, jobs))?;
    let arms: Vec<DecayArm> = outs
        .into_iter()
        .map(|o| DecayArm {
            seed: o.config.seed,
            decay_enabled: o.config.hyper.decay_enabled,
            time_to_target_ms: Summary::first_hit(&o.frame.rows, target).time_ms,
            rows: o.frame.rows,
        })
        .collect();
    let (on, off): (Vec<_>, Vec<_>) = arms.into_iter().partition(|a| a.decay_enabled);
    let times = |arms: &[DecayArm]| arms.iter().map(|a| a.time_to_target_ms).collect::<Vec<_>>();
    Ok(DecayAblation {
        target,
        median_on_ms: median(&times(&on)),
        median_off_ms: median(&times(&off)),
        on,
        off,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_treats_none_as_infinite() {
        assert_eq!(median(&[Some(3.0), None, Some(1.0)]), Some(3.0));
        assert_eq!(median(&[Some(3.0), None, None]), None);
        assert_eq!(median(&[Some(1.0), Some(2.0)]), Some(1.5));
        assert_eq!(median(&[]), None);
    }
}

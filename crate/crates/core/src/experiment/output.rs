//! Per-run output directory: CSV time series, JSON summary and manifest, and their parsers.

use std::fs;
use std::path::Path;

use crate::sim::{QueueSample, RunManifest, TimeRow};

use super::run::{ClientCount, RunOutput, Summary};
use super::ExperimentError;

pub const FILE_MANIFEST: &str = "manifest.json";
pub const FILE_CONFIG: &str = "config.toml";
pub const FILE_TIMESERIES: &str = "timeseries.csv";
pub const FILE_CLIENT_UPDATES: &str = "client_updates.csv";
pub const FILE_QUEUES: &str = "queues.csv";
pub const FILE_SUMMARY: &str = "summary.json";
pub const FILE_TRACE_HASH: &str = "trace-hash";

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    fs::write(path, bytes).map_err(|e| ExperimentError::io(path.display(), e))
}

fn read_file(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|e| ExperimentError::io(path.display(), e))
}

fn csv_bytes(header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| ExperimentError::io("csv", e);
    w.write_record(&header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.into_inner().map_err(|e| ExperimentError::io("csv", e))
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ExperimentError::io("json", e))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes every output file of a run into `dir`, creating it if needed.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir.display(), e))?;
    let frame = &out.frame;
    write_file(&dir.join(FILE_MANIFEST), &json_bytes(&out.manifest)?)?;
    write_file(&dir.join(FILE_CONFIG), out.config.to_toml_string().as_bytes())?;

    let n_acc = frame.rows.first().map_or(0, |r| r.server_accuracy.len());
    let n_queue = frame.rows.first().map_or(0, |r| r.queue_len.len());
    let mut header: Vec<String> = vec!["sim_time_ms".into(), "updates_processed".into(), "accuracy".into()];
    header.extend((0..n_acc).map(|i| format!("accuracy_s{i}")));
    header.extend((0..n_queue).map(|i| format!("queue_s{i}")));
    let rows = frame.rows.iter().map(|r| {
        let mut row = vec![r.sim_time_ms.to_string(), r.updates_processed.to_string(), r.accuracy.to_string()];
        row.extend(r.server_accuracy.iter().map(f64::to_string));
        row.extend(r.queue_len.iter().map(usize::to_string));
        row
    });
    write_file(&dir.join(FILE_TIMESERIES), &csv_bytes(header, rows)?)?;

    let rows = frame
        .client_updates
        .iter()
        .map(|c| vec![c.client.to_string(), c.server.to_string(), c.updates.to_string()]);
    let header = vec!["client".into(), "server".into(), "updates".into()];
    write_file(&dir.join(FILE_CLIENT_UPDATES), &csv_bytes(header, rows)?)?;

    let n_queue = frame.queue_peaks.len();
    let mut header: Vec<String> = vec!["sim_time_ms".into()];
    header.extend((0..n_queue).map(|i| format!("queue_s{i}")));
    let rows = frame.queue_samples.iter().map(|q| {
        let mut row = vec![q.sim_time_ms.to_string()];
        row.extend(q.queue_len.iter().map(usize::to_string));
        row
    });
    write_file(&dir.join(FILE_QUEUES), &csv_bytes(header, rows)?)?;

    write_file(&dir.join(FILE_SUMMARY), &json_bytes(&frame.summary)?)?;
    write_file(&dir.join(FILE_TRACE_HASH), format!("{}\n", frame.summary.trace_hash).as_bytes())?;
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T, ExperimentError>
where
    T::Err: std::fmt::Display,
{
    field
        .parse()
        .map_err(|e| ExperimentError::io(path.display(), format!("bad value `{field}`: {e}")))
}

/// Header plus data records of a CSV file.
fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>), ExperimentError> {
    let text = read_file(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| ExperimentError::io(path.display(), e))?
        .iter()
        .map(str::to_string)
        .collect();
    let records = r
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ExperimentError::io(path.display(), e))?;
    Ok((header, records))
}

fn count_prefixed(header: &[String], prefix: &str) -> usize {
    header.iter().filter(|h| h.starts_with(prefix)).count()
}

pub fn read_timeseries(path: &Path) -> Result<Vec<TimeRow>, ExperimentError> {
    let (header, records) = read_csv(path)?;
    let n_acc = count_prefixed(&header, "accuracy_s");
    let n_queue = count_prefixed(&header, "queue_s");
    if header.len() != 3 + n_acc + n_queue {
        return Err(ExperimentError::io(path.display(), "unexpected columns"));
    }
    records
        .iter()
        .map(|rec| {
            let f: Vec<&str> = rec.iter().collect();
            Ok(TimeRow {
                sim_time_ms: parse(path, f[0])?,
                updates_processed: parse(path, f[1])?,
                accuracy: parse(path, f[2])?,
                server_accuracy: f[3..3 + n_acc].iter().map(|v| parse(path, v)).collect::<Result<_, _>>()?,
                queue_len: f[3 + n_acc..].iter().map(|v| parse(path, v)).collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

pub fn read_client_updates(path: &Path) -> Result<Vec<ClientCount>, ExperimentError> {
    let (_, records) = read_csv(path)?;
    records
        .iter()
        .map(|rec| {
            Ok(ClientCount {
                client: parse(path, &rec[0])?,
                server: parse(path, &rec[1])?,
                updates: parse(path, &rec[2])?,
            })
        })
        .collect()
}

pub fn read_queues(path: &Path) -> Result<Vec<QueueSample>, ExperimentError> {
    let (_, records) = read_csv(path)?;
    records
        .iter()
        .map(|rec| {
            Ok(QueueSample {
                sim_time_ms: parse(path, &rec[0])?,
                queue_len: rec.iter().skip(1).map(|v| parse(path, v)).collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

pub fn read_summary(path: &Path) -> Result<Summary, ExperimentError> {
    serde_json::from_str(&read_file(path)?).map_err(|e| ExperimentError::io(path.display(), e))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, ExperimentError> {
    serde_json::from_str(&read_file(path)?).map_err(|e| ExperimentError::io(path.display(), e))
}

pub fn read_trace_hash(path: &Path) -> Result<String, ExperimentError> {
    Ok(read_file(path)?.trim().to_string())
}

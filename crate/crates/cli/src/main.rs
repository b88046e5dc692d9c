use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsim::experiment::{
    bandwidth_report, decay_ablation, queue_trace, scalability_suite, update_histogram, write_run, ExperimentConfig,
    ExperimentError, RunOptions, RunOutput,
};
use fedsim::protocol::Algorithm;
use fedsim::sim::ByteWindow;

#[derive(Parser, Debug)]
#[command(name = "fedsim", version, about = "Federated learning simulator and experiment runner")]
struct Cli {
    /// Experiment config file (TOML). May name a base preset with `preset = "..."`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset to start from when no config file is given.
    #[arg(long, global = true, default_value = "desk-synth")]
    preset: String,
    /// Master seed; suites use this and the following seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Override any config field, e.g. `hyper.eta_init=0.1`. Repeatable.
    #[arg(long = "override", short = 'o', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Concurrent runs inside a suite.
    #[arg(long, global = true, default_value_t = default_jobs())]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write its metric files.
    Run {
        /// Also write the event trace as JSON lines.
        #[arg(long)]
        trace: bool,
    },
    /// Time-to-threshold multipliers as the number of clients grows.
    Scalability {
        #[arg(long, value_delimiter = ',', default_value = "40,80")]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "spyker,fedasync,fedavg")]
        algorithms: Vec<Algorithm>,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Per-server ingress queue lengths over time.
    Queues,
    /// Number of updates contributed by every client.
    Histogram,
    /// Bytes sent per link class for each algorithm over a fixed window.
    Bandwidth {
        #[arg(long, value_delimiter = ',', default_value = "spyker,sync-spyker,fedavg,fedasync,hierfavg")]
        algorithms: Vec<Algorithm>,
        #[arg(long, default_value_t = 0.0)]
        window_start_ms: f64,
        #[arg(long, default_value_t = 110_000.0)]
        window_ms: f64,
    },
    /// Accuracy curves with the learning-rate decay enabled and disabled.
    AblateDecay {
        #[arg(long, default_value_t = 0.85)]
        target: f64,
        #[command(flatten)]
        seeds: SeedArgs,
    },
}

#[derive(Args, Debug)]
struct SeedArgs {
    /// Number of consecutive seeds starting at the master seed.
    #[arg(long, default_value_t = 5)]
    n_seeds: u64,
}

impl SeedArgs {
    fn list(&self, first: u64) -> Vec<u64> {
        (first..first + self.n_seeds).collect()
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path, &cli.overrides)?,
        None => ExperimentConfig::preset(&cli.preset, &cli.overrides)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|e| ExperimentError::io(path.display(), e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::io("json", e))?;
    write_text(path, &(text + "\n"))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "unreached".to_string(), |x| x.to_string())
}

fn report_run(out: &RunOutput) {
    let s = &out.frame.summary;
    println!(
        "{} {} seed={} stop={:?} end_ms={} updates={} final_acc={} time_to_90={} bytes={}",
        s.name,
        s.algorithm,
        s.seed,
        s.stop_reason,
        s.end_time_ms,
        s.updates_processed,
        opt(s.final_accuracy),
        opt(s.time_to_90),
        s.bytes.total()
    );
}

fn execute(cli: &Cli) -> Result<(), ExperimentError> {
    let cfg = load_config(cli)?;
    let out_dir = &cli.out_dir;
    fs::create_dir_all(out_dir).map_err(|e| ExperimentError::io(out_dir.display(), e))?;
    match &cli.command {
        Command::Run { trace } => {
            let opts = RunOptions {
                trace: trace.then(|| out_dir.join("trace.jsonl")),
            };
            let out = fedsim::experiment::run_experiment_with(&cfg, &opts)?;
            write_run(out_dir, &out)?;
            report_run(&out);
        }
        Command::Scalability {
            counts,
            algorithms,
            threshold,
            seeds,
        } => {
            let table = scalability_suite(&cfg, algorithms, counts, &seeds.list(cfg.seed), *threshold, cli.jobs)?;
            let mut csv = String::from("algorithm,n_clients,median_time_ms,median_updates,time_multiplier,update_multiplier\n");
            for r in &table.rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    r.algorithm,
                    r.n_clients,
                    opt(r.median_time_ms),
                    opt(r.median_updates),
                    opt(r.time_multiplier),
                    opt(r.update_multiplier)
                );
            }
            write_text(&out_dir.join("scalability.csv"), &csv)?;
            write_json(&out_dir.join("scalability.json"), &table)?;
            print!("{csv}");
        }
        Command::Queues => {
            let (trace, out) = queue_trace(&cfg)?;
            write_run(out_dir, &out)?;
            write_json(&out_dir.join("queue_peaks.json"), &trace.peaks)?;
            println!("{} queue peaks per server: {:?}", trace.algorithm, trace.peaks);
        }
        Command::Histogram => {
            let (counts, out) = update_histogram(&cfg)?;
            write_run(out_dir, &out)?;
            let total: u64 = counts.iter().map(|c| c.updates).sum();
            let max = counts.iter().map(|c| c.updates).max().unwrap_or(0);
            let min = counts.iter().map(|c| c.updates).min().unwrap_or(0);
            println!("{} clients, {total} updates, min {min}, max {max}", counts.len());
        }
        Command::Bandwidth {
            algorithms,
            window_start_ms,
            window_ms,
        } => {
            let window = ByteWindow {
                start_ms: *window_start_ms,
                length_ms: Some(*window_ms),
            };
            let rows = bandwidth_report(&cfg, algorithms, window, cli.jobs)?;
            let mut csv = String::from("algorithm,server_server,server_client,total\n");
            for r in &rows {
                let _ = writeln!(csv, "{},{},{},{}", r.algorithm, r.server_server, r.server_client, r.total);
            }
            write_text(&out_dir.join("bandwidth.csv"), &csv)?;
            print!("{csv}");
        }
        Command::AblateDecay { target, seeds } => {
            let ab = decay_ablation(&cfg, &seeds.list(cfg.seed), *target, cli.jobs)?;
            let mut csv = String::from("decay,seed,sim_time_ms,updates_processed,accuracy\n");
            for arm in ab.on.iter().chain(&ab.off) {
                let label = if arm.decay_enabled { "on" } else { "off" };
                for r in &arm.rows {
                    let _ = writeln!(csv, "{label},{},{},{},{}", arm.seed, r.sim_time_ms, r.updates_processed, r.accuracy);
                }
            }
            write_text(&out_dir.join("decay_curves.csv"), &csv)?;
            write_json(
                &out_dir.join("decay_summary.json"),
                &serde_json::json!({
                    "target": ab.target,
                    "median_on_ms": ab.median_on_ms,
                    "median_off_ms": ab.median_off_ms,
                    "on": ab.on.iter().map(|a| (a.seed, a.time_to_target_ms)).collect::<Vec<_>>(),
                    "off": ab.off.iter().map(|a| (a.seed, a.time_to_target_ms)).collect::<Vec<_>>(),
                }),
            )?;
            println!(
                "time to {}: decay on {}, decay off {}",
                ab.target,
                opt(ab.median_on_ms),
                opt(ab.median_off_ms)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            if let Some(diag) = e.diagnostics() {
                let path = cli.out_dir.join("diagnostics.json");
                if fs::create_dir_all(&cli.out_dir).is_ok() && write_json(&path, &diag).is_ok() {
                    eprintln!("diagnostics written to {}", path.display());
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

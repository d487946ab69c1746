//! Benchmark frontend for the delayed-flights workload.
//!
//! Subcommands cover the whole measurement loop: `generate` a synthetic
//! dataset, `ingest` a raw on-time-performance extract, `run` the pipeline
//! once, `sweep-chunk` the boundary-crossing cost model, `scale-sweep`
//! worker counts with repeated runs, and `report` percentile CSVs from a
//! stats directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use streamshield::enclave::{
    key_from_env, sweep_chunk_sizes, CostModel, TransformRegistry, KEY_ENV_DEFAULT,
};
use streamshield::flights::{
    delayed_flights_spec, generate_dataset, ingest_bts, pipeline_carrier_stats,
    register_flight_transforms,
};
use streamshield::harness::scale_sweep;
use streamshield::metrics::collect_metrics;
use streamshield::pipeline::{LaunchOptions, SecurityMode};

#[derive(Parser)]
#[command(name = "bench", about = "Delayed-flights benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Clear,
    Encrypted,
    Enclave,
}

impl From<ModeArg> for SecurityMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Clear => SecurityMode::Clear,
            ModeArg::Encrypted => SecurityMode::Encrypted,
            ModeArg::Enclave => SecurityMode::Enclave,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic flight dataset.
    Generate {
        #[arg(long, default_value_t = 100_000)]
        rows: u64,
        #[arg(long, default_value_t = 20)]
        carriers: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a raw on-time-performance CSV onto the flight schema.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the delayed-flights pipeline once and write a throughput report.
    Run {
        /// Dataset path; generated on the fly when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        rows: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Clear)]
        mode: ModeArg,
        /// Worker instances per processing stage.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Source partitions.
        #[arg(long, default_value_t = 2)]
        partitions: usize,
        #[arg(long, default_value_t = 256)]
        chunk_records: usize,
        /// Directory for per-component stats; a temporary one when absent.
        #[arg(long)]
        stats_dir: Option<PathBuf>,
        /// Percentile report output file.
        #[arg(long, default_value = "report.csv")]
        report: PathBuf,
        #[arg(long)]
        realistic_delay: bool,
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    /// Model total boundary-crossing time across chunk sizes.
    SweepChunk {
        /// Chunk sizes: a `min..max` power-of-two range or a comma list.
        /// Sizes accept K/M/G binary suffixes.
        #[arg(long, default_value = "256..1M")]
        sizes: String,
        /// Total bytes moved through the boundary.
        #[arg(long, default_value = "100M")]
        total: String,
    },
    /// Measure completion time at several worker counts for one stage.
    ScaleSweep {
        #[arg(long, default_value = "mapper")]
        stage: String,
        /// Comma-separated worker counts.
        #[arg(long, default_value = "1,2,4")]
        counts: String,
        #[arg(long, default_value_t = 100_000)]
        rows: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Clear)]
        mode: ModeArg,
        #[arg(long, default_value_t = 2)]
        partitions: usize,
        #[arg(long, default_value_t = 256)]
        chunk_records: usize,
        /// Repetitions per configuration.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
    /// Build the stacked-percentile report from a stats directory.
    Report {
        #[arg(long)]
        stats_dir: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses a byte size with an optional binary K/M/G suffix.
fn parse_size(text: &str) -> Result<usize, String> {
    let text = text.trim();
    let (digits, mult) = match text.chars().last() {
        Some('k') | Some('K') => (&text[..text.len() - 1], 1024),
        Some('m') | Some('M') => (&text[..text.len() - 1], 1024 * 1024),
        Some('g') | Some('G') => (&text[..text.len() - 1], 1024 * 1024 * 1024),
        _ => (text, 1),
    };
    let digits = digits
        .strip_suffix(|c: char| c == 'i' || c == 'I')
        .unwrap_or(digits);
    let value: usize = digits
        .trim()
        .parse()
        .map_err(|_| format!("invalid size {text:?}"))?;
    value
        .checked_mul(mult)
        .ok_or_else(|| format!("size {text:?} overflows"))
}

/// Parses `min..max` into powers of two, or a comma list of sizes.
fn parse_sizes(text: &str) -> Result<Vec<usize>, String> {
    if let Some((min, max)) = text.split_once("..") {
        let (min, max) = (parse_size(min)?, parse_size(max)?);
        if min == 0 || max < min {
            return Err(format!("invalid size range {text:?}"));
        }
        Ok(streamshield::enclave::power_of_two_sizes(min, max))
    } else {
        text.split(',').map(parse_size).collect()
    }
}

fn parse_counts(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| format!("invalid worker count {part:?}"))
        })
        .collect()
}

/// A pre-provisioned secret for benchmark runs: the environment variable
/// wins, otherwise a fixed key keeps runs reproducible without setup.
fn bench_key() -> [u8; 32] {
    key_from_env(KEY_ENV_DEFAULT).unwrap_or([0x42u8; 32])
}

fn registry() -> Result<Arc<TransformRegistry>, anyhow::Error> {
    let registry = TransformRegistry::new();
    register_flight_transforms(&registry)?;
    Ok(registry)
}

fn dataset(
    input: Option<PathBuf>,
    rows: u64,
    seed: u64,
    scratch: &Path,
) -> Result<PathBuf, anyhow::Error> {
    match input {
        Some(path) => Ok(path),
        None => {
            let path = scratch.join("flights.csv");
            generate_dataset(&path, rows, 20, seed)?;
            Ok(path)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, anyhow::Error> {
    match cli.command {
        Command::Generate {
            rows,
            carriers,
            seed,
            out,
        } => {
            generate_dataset(&out, rows, carriers, seed)?;
            println!("wrote {} rows to {}", rows, out.display());
        }
        Command::Ingest { input, out } => {
            let summary = ingest_bts(&input, &out)?;
            println!(
                "projected {} rows to {} ({} malformed rows dropped)",
                summary.rows,
                out.display(),
                summary.dropped
            );
        }
        Command::Run {
            input,
            rows,
            seed,
            mode,
            workers,
            partitions,
            chunk_records,
            stats_dir,
            report,
            realistic_delay,
            timeout_secs,
        } => {
            let scratch = tempfile::tempdir()?;
            let data = dataset(input, rows, seed, scratch.path())?;
            let stats_dir = stats_dir.unwrap_or_else(|| scratch.path().join("stats"));

            let spec = delayed_flights_spec(mode.into(), partitions, workers, chunk_records);
            let mut options = LaunchOptions::new(registry()?);
            options.input_override = Some(data);
            options.stats_dir = Some(stats_dir.clone());
            options.realistic_delay = realistic_delay;
            options.key = Some(bench_key());

            let run_report = streamshield::pipeline::run_pipeline(
                &spec,
                options,
                Duration::from_secs(timeout_secs),
            )?;
            println!(
                "completed in {:.3}s (mode {})",
                run_report.elapsed.as_secs_f64(),
                run_report.mode
            );
            if run_report.malformed > 0 {
                println!("malformed input lines dropped: {}", run_report.malformed);
            }
            println!("carrier,delayed_count,delay_sum,mean_delay");
            for s in pipeline_carrier_stats(&run_report) {
                println!(
                    "{},{},{:.1},{:.3}",
                    s.carrier,
                    s.delayed_count,
                    s.delay_sum,
                    s.mean_delay()
                );
            }

            let percentiles = collect_metrics(&stats_dir)?;
            std::fs::write(&report, percentiles.to_csv())?;
            println!("report written to {}", report.display());
        }
        Command::SweepChunk { sizes, total } => {
            let sizes = match parse_sizes(&sizes) {
                Ok(sizes) if !sizes.is_empty() => sizes,
                Ok(_) => return usage("no chunk sizes in range"),
                Err(e) => return usage(&e),
            };
            let total = match parse_size(&total) {
                Ok(total) => total as u64,
                Err(e) => return usage(&e),
            };
            let rows = sweep_chunk_sizes(&CostModel::default(), total, &sizes);
            println!("chunk_size,calls,total_in_ms,total_in_out_ms,in_out_ratio");
            for row in rows {
                println!(
                    "{},{},{:.3},{:.3},{:.4}",
                    row.chunk_size,
                    row.calls,
                    row.total_in.as_secs_f64() * 1000.0,
                    row.total_in_out.as_secs_f64() * 1000.0,
                    row.in_out_ratio
                );
            }
        }
        Command::ScaleSweep {
            stage,
            counts,
            rows,
            seed,
            mode,
            partitions,
            chunk_records,
            reps,
            timeout_secs,
        } => {
            let counts = match parse_counts(&counts) {
                Ok(counts) if !counts.is_empty() => counts,
                Ok(_) => return usage("no worker counts given"),
                Err(e) => return usage(&e),
            };
            let scratch = tempfile::tempdir()?;
            let data = dataset(None, rows, seed, scratch.path())?;

            let spec = delayed_flights_spec(mode.into(), partitions, 1, chunk_records);
            let mut options = LaunchOptions::new(registry()?);
            options.input_override = Some(data);
            options.key = Some(bench_key());

            let sweep = scale_sweep(
                &spec,
                &options,
                &stage,
                &counts,
                reps,
                Duration::from_secs(timeout_secs),
            )?;
            println!("workers,mean_s,stddev_s,runs");
            for row in &sweep {
                println!(
                    "{},{:.3},{:.3},{}",
                    row.workers,
                    row.stats.mean.as_secs_f64(),
                    row.stats.stddev.as_secs_f64(),
                    row.stats.samples.len()
                );
            }
        }
        Command::Report { stats_dir, out } => {
            let report = collect_metrics(&stats_dir)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, report.to_csv())?;
                    println!("report written to {}", path.display());
                }
                None => print!("{}", report.to_csv()),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn usage(message: &str) -> Result<ExitCode, anyhow::Error> {
    eprintln!("bench: {message}");
    Ok(ExitCode::from(2))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::FAILURE
        }
    }
}

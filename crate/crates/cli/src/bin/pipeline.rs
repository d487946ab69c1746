//! Pipeline launcher.
//!
//! `pipeline run <spec>` reads a TOML topology file, validates it, deploys
//! every component on local threads, and waits for completion. Exit code 0
//! on completion, 2 on a validation error, 3 on a runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use streamshield::enclave::TransformRegistry;
use streamshield::flights::{groups_to_carrier_stats, register_flight_transforms};
use streamshield::pipeline::{
    parse_spec, run_pipeline, LaunchOptions, PipelineError, PipelineReport, SecurityMode,
};

#[derive(Parser)]
#[command(name = "pipeline", about = "Deploys and supervises a stream-processing topology")]
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
    /// Run a topology file to completion.
    Run {
        /// Topology file (TOML).
        spec: PathBuf,
        /// Override the security mode declared in the spec.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Per-stage worker count overrides, `stage=N`. Repeatable.
        #[arg(long = "workers", value_name = "STAGE=N")]
        workers: Vec<String>,
        /// Directory for per-component throughput stats files.
        #[arg(long)]
        stats_dir: Option<PathBuf>,
        /// Dataset path overriding the source stage's declared input.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Sleep for simulated boundary-crossing time instead of only
        /// metering it.
        #[arg(long)]
        realistic_delay: bool,
        /// Completion deadline in seconds; a run past it is failed with a
        /// per-component progress snapshot.
        #[arg(long, default_value_t = 600)]
        timeout_secs: u64,
    },
}

fn parse_worker_overrides(args: &[String]) -> Result<Vec<(String, usize)>, String> {
    args.iter()
        .map(|arg| {
            let (stage, count) = arg
                .split_once('=')
                .ok_or_else(|| format!("--workers takes STAGE=N, got {arg:?}"))?;
            let count: usize = count
                .parse()
                .map_err(|_| format!("--workers count must be a number, got {arg:?}"))?;
            Ok((stage.to_string(), count))
        })
        .collect()
}

fn print_report(report: &PipelineReport) {
    println!(
        "completed in {:.3}s (mode {})",
        report.elapsed.as_secs_f64(),
        report.mode
    );
    for stage in &report.stages {
        println!(
            "  {:<24} x{}  in {:>8}  out {:>8}  {:>12} B",
            stage.stage, stage.components, stage.frames_in, stage.frames_out, stage.bytes_out
        );
    }
    if report.malformed > 0 {
        println!("  malformed input lines dropped: {}", report.malformed);
    }
    let stats = groups_to_carrier_stats(&report.groups);
    if !stats.is_empty() {
        println!("carrier,delayed_count,delay_sum,mean_delay");
        for s in &stats {
            println!(
                "{},{},{:.1},{:.3}",
                s.carrier,
                s.delayed_count,
                s.delay_sum,
                s.mean_delay()
            );
        }
    }
}

fn run() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run {
        spec,
        mode,
        workers,
        stats_dir,
        input,
        realistic_delay,
        timeout_secs,
    } = cli.command;

    let registry = TransformRegistry::new();
    if let Err(e) = register_flight_transforms(&registry) {
        eprintln!("pipeline: {e}");
        return ExitCode::from(3);
    }

    let text = match std::fs::read_to_string(&spec) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("pipeline: cannot read {}: {e}", spec.display());
            return ExitCode::from(2);
        }
    };
    let mut parsed = match parse_spec(&text, &registry) {
        Ok(parsed) => parsed,
        Err(e) => {
            eprintln!("pipeline: invalid spec: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(mode) = mode {
        parsed.mode = mode.into();
    }
    let overrides = match parse_worker_overrides(&workers) {
        Ok(overrides) => overrides,
        Err(e) => {
            eprintln!("pipeline: {e}");
            return ExitCode::from(2);
        }
    };

    let mut options = LaunchOptions::new(Arc::clone(&registry));
    options.stats_dir = stats_dir;
    options.input_override = input;
    options.realistic_delay = realistic_delay;
    options.worker_overrides = overrides.into_iter().collect();

    match run_pipeline(&parsed, options, Duration::from_secs(timeout_secs)) {
        Ok(report) => {
            print_report(&report);
            ExitCode::SUCCESS
        }
        Err(e @ (PipelineError::Spec(_)
        | PipelineError::UnknownStage(_)
        | PipelineError::CannotScale(_))) => {
            eprintln!("pipeline: invalid configuration: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("pipeline: run failed: {e}");
            ExitCode::from(3)
        }
    }
}

fn main() -> ExitCode {
    run()
}

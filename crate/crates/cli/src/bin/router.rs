//! Standalone router process.
//!
//! Binds an inbound pull socket and an outbound push socket, forwards
//! data frames without inspecting payloads, and terminates once every
//! expected upstream connection has delivered its end-of-stream markers
//! and closed.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use streamshield::metrics::StatsWriter;
use streamshield::routing::{run_router, RouterConfig};
use streamshield::wire::Endpoint;

#[derive(Parser)]
#[command(name = "router", about = "Payload-oblivious broker between pipeline stages")]
struct Args {
    /// Bind endpoint for the inbound pull socket, host:port.
    #[arg(long = "in")]
    inbound: String,
    /// Bind endpoint for the outbound push socket, host:port.
    #[arg(long = "out")]
    outbound: String,
    /// Upstream connections that must close before the router completes.
    #[arg(long)]
    expected_upstreams: usize,
    /// Throughput stats file; one `timestamp_ms,node,bytes_out` line per
    /// one-second interval.
    #[arg(long)]
    stats: Option<PathBuf>,
}

fn run(args: Args) -> Result<ExitCode, anyhow::Error> {
    let inbound = match Endpoint::parse(&args.inbound) {
        Ok(ep) => ep,
        Err(e) => {
            eprintln!("router: invalid --in endpoint: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let outbound = match Endpoint::parse(&args.outbound) {
        Ok(ep) => ep,
        Err(e) => {
            eprintln!("router: invalid --out endpoint: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    if args.expected_upstreams == 0 {
        eprintln!("router: --expected-upstreams must be at least 1");
        return Ok(ExitCode::from(2));
    }

    let stats = match &args.stats {
        None => None,
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
            let node = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("router");
            Some(StatsWriter::create(dir.unwrap_or(std::path::Path::new(".")), node)?)
        }
    };

    let config = RouterConfig::new("router", inbound, outbound);
    let report = run_router(config, args.expected_upstreams, stats)?;
    println!(
        "router: forwarded {} frames, {} bytes in {:.3}s",
        report.frames,
        report.bytes,
        report.duration.as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("router: {e}");
            ExitCode::from(3)
        }
    }
}

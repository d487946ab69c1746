//! Per-node throughput sampling and stacked-percentile reports.
//!
//! Every component appends `timestamp_ms,node,bytes_out` lines to its own
//! stats file, one sample per one-second interval. After a run the
//! collector buckets all samples per interval across nodes and reports
//! nearest-rank min/p25/p50/p75/max, ready to plot as stacked percentiles.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no samples found under {0}")]
    NoSamples(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed stats line: {0:?}")]
    MalformedLine(String),
}

/// One `timestamp_ms,node,bytes_out` measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThroughputSample {
    /// Milliseconds since run start, interval-aligned.
    pub timestamp_ms: u64,
    pub node: String,
    /// Bytes sent during the one-second interval.
    pub bytes_out: u64,
}

/// Sampling interval; matches the per-second granularity of the reports.
pub const INTERVAL_MS: u64 = 1000;

/// Single-writer append-only stats file for one node.
pub struct StatsWriter {
    node: String,
    out: BufWriter<File>,
    started: Instant,
    bucket_start_ms: u64,
    bucket_bytes: u64,
}

impl StatsWriter {
    /// Creates `<dir>/<node>.csv`.
    pub fn create(dir: &Path, node: &str) -> Result<Self, MetricsError> {
        fs::create_dir_all(dir)?;
        let file = File::create(dir.join(format!("{node}.csv")))?;
        Ok(StatsWriter {
            node: node.to_string(),
            out: BufWriter::new(file),
            started: Instant::now(),
            bucket_start_ms: 0,
            bucket_bytes: 0,
        })
    }

    /// Accounts `bytes` sent now, flushing completed intervals.
    pub fn record(&mut self, bytes: u64) {
        let now_ms = self.started.elapsed().as_millis() as u64;
        let bucket = now_ms / INTERVAL_MS * INTERVAL_MS;
        if bucket != self.bucket_start_ms {
            self.flush_bucket();
            self.bucket_start_ms = bucket;
        }
        self.bucket_bytes += bytes;
    }

    /// Writes out the partial final interval. Called on completion.
    pub fn finish(&mut self) {
        self.flush_bucket();
        self.out.flush().ok();
    }

    fn flush_bucket(&mut self) {
        if self.bucket_bytes > 0 {
            writeln!(
                self.out,
                "{},{},{}",
                self.bucket_start_ms, self.node, self.bucket_bytes
            )
            .ok();
        }
        self.bucket_bytes = 0;
    }
}

impl Drop for StatsWriter {
    fn drop(&mut self) {
        self.finish();
    }
}

/// One report row: the five stacked-percentile values of `bytes_out`
/// across nodes in one interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PercentileRow {
    /// Interval index (seconds since run start).
    pub interval: u64,
    pub min: u64,
    pub p25: u64,
    pub p50: u64,
    pub p75: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Default)]
pub struct PercentileReport {
    pub rows: Vec<PercentileRow>,
}

impl PercentileReport {
    /// Plot-ready CSV: `interval,min,p25,p50,p75,max`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval,min,p25,p50,p75,max\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.interval, row.min, row.p25, row.p50, row.p75, row.max
            ));
        }
        out
    }
}

/// Nearest-rank percentile over a sorted slice: the value at rank
/// `ceil(p/100 * n)` (1-based). Exact and parameter-free.
fn nearest_rank(sorted: &[u64], percentile: f64) -> u64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len() as f64;
    let rank = (percentile / 100.0 * n).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Builds a percentile report from loose samples.
pub fn percentiles_from_samples(samples: &[ThroughputSample]) -> PercentileReport {
    use std::collections::BTreeMap;
    let mut by_interval: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for sample in samples {
        by_interval
            .entry(sample.timestamp_ms / INTERVAL_MS)
            .or_default()
            .push(sample.bytes_out);
    }
    let rows = by_interval
        .into_iter()
        .map(|(interval, mut values)| {
            values.sort_unstable();
            PercentileRow {
                interval,
                min: values[0],
                p25: nearest_rank(&values, 25.0),
                p50: nearest_rank(&values, 50.0),
                p75: nearest_rank(&values, 75.0),
                max: *values.last().unwrap(),
            }
        })
        .collect();
    PercentileReport { rows }
}

/// Reads every `*.csv` stats file in a directory.
pub fn read_stats_dir(dir: &Path) -> Result<Vec<ThroughputSample>, MetricsError> {
    let mut samples = Vec::new();
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                continue;
            }
            for line in fs::read_to_string(&path)?.lines() {
                if line.is_empty() {
                    continue;
                }
                let mut parts = line.splitn(3, ',');
                let (ts, node, bytes) = (parts.next(), parts.next(), parts.next());
                match (ts, node, bytes) {
                    (Some(ts), Some(node), Some(bytes)) => samples.push(ThroughputSample {
                        timestamp_ms: ts
                            .parse()
                            .map_err(|_| MetricsError::MalformedLine(line.to_string()))?,
                        node: node.to_string(),
                        bytes_out: bytes
                            .parse()
                            .map_err(|_| MetricsError::MalformedLine(line.to_string()))?,
                    }),
                    _ => return Err(MetricsError::MalformedLine(line.to_string())),
                }
            }
        }
    }
    if samples.is_empty() {
        return Err(MetricsError::NoSamples(dir.to_path_buf()));
    }
    Ok(samples)
}

/// Full collection pass: stats dir in, percentile report out.
pub fn collect_metrics(dir: &Path) -> Result<PercentileReport, MetricsError> {
    Ok(percentiles_from_samples(&read_stats_dir(dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(ts: u64, node: &str, bytes: u64) -> ThroughputSample {
        ThroughputSample {
            timestamp_ms: ts,
            node: node.to_string(),
            bytes_out: bytes,
        }
    }

    #[test]
    fn constant_rate_degenerates_to_equal_percentiles() {
        let samples: Vec<_> = (0..3)
            .map(|i| sample(i * 1000, "node", 5_000_000))
            .collect();
        let report = percentiles_from_samples(&samples);
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            assert_eq!(
                (row.min, row.p25, row.p50, row.p75, row.max),
                (5_000_000, 5_000_000, 5_000_000, 5_000_000, 5_000_000)
            );
        }
    }

    #[test]
    fn odd_count_nearest_rank() {
        let samples: Vec<_> = [1, 2, 3, 4, 5]
            .iter()
            .enumerate()
            .map(|(i, mb)| sample(0, &format!("n{i}"), mb * 1_000_000))
            .collect();
        let report = percentiles_from_samples(&samples);
        let row = &report.rows[0];
        assert_eq!(row.min, 1_000_000);
        assert_eq!(row.p50, 3_000_000);
        assert_eq!(row.max, 5_000_000);
    }

    #[test]
    fn percentile_ordering_invariant() {
        let samples: Vec<_> = (0..17)
            .map(|i| sample((i % 5) * 1000, &format!("n{i}"), (i * 37 % 11) * 1024))
            .collect();
        let report = percentiles_from_samples(&samples);
        for row in &report.rows {
            assert!(row.min <= row.p25);
            assert!(row.p25 <= row.p50);
            assert!(row.p50 <= row.p75);
            assert!(row.p75 <= row.max);
        }
    }

    #[test]
    fn writer_and_collector_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut writer = StatsWriter::create(dir.path(), "worker_0").unwrap();
            writer.record(1024);
            writer.record(2048);
            writer.finish();
        }
        let report = collect_metrics(dir.path()).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].max, 3072);
    }

    #[test]
    fn empty_dir_is_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            collect_metrics(dir.path()),
            Err(MetricsError::NoSamples(_))
        ));
    }
}

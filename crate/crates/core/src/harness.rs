//! Measurement harness: repeated runs, worker scale sweeps, and security
//! mode comparisons.
//!
//! Every experiment repeats whole pipeline runs and reports mean and
//! sample standard deviation, so single outliers stay visible instead of
//! silently shaping a conclusion.

use std::time::Duration;

use crate::pipeline::{
    run_pipeline, LaunchOptions, PipelineError, PipelineReport, PipelineSpec, SecurityMode,
};

/// Mean and spread over repeated wall-clock samples.
#[derive(Debug, Clone)]
pub struct SampleStats {
    pub samples: Vec<Duration>,
    pub mean: Duration,
    /// Sample standard deviation (n-1); zero for a single sample.
    pub stddev: Duration,
}

/// Summarizes a set of duration samples.
pub fn sample_stats(samples: Vec<Duration>) -> SampleStats {
    assert!(!samples.is_empty());
    let secs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
    let mean = secs.iter().sum::<f64>() / secs.len() as f64;
    let var = if secs.len() > 1 {
        secs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (secs.len() - 1) as f64
    } else {
        0.0
    };
    SampleStats {
        samples,
        mean: Duration::from_secs_f64(mean),
        stddev: Duration::from_secs_f64(var.sqrt()),
    }
}

/// Median of a set of durations.
pub fn median(samples: &[Duration]) -> Duration {
    assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort();
    sorted[(sorted.len() - 1) / 2]
}

/// Runs the same spec `repetitions` times.
pub fn repeat_runs(
    spec: &PipelineSpec,
    options: &LaunchOptions,
    repetitions: usize,
    timeout: Duration,
) -> Result<(Vec<PipelineReport>, SampleStats), PipelineError> {
    let mut reports = Vec::with_capacity(repetitions);
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions.max(1) {
        let report = run_pipeline(spec, options.clone(), timeout)?;
        samples.push(report.elapsed);
        reports.push(report);
    }
    Ok((reports, sample_stats(samples)))
}

/// One point of a worker scale sweep.
#[derive(Debug, Clone)]
pub struct ScaleSweepRow {
    pub workers: usize,
    pub stats: SampleStats,
}

/// Measures the same workload at several worker counts for one stage.
pub fn scale_sweep(
    spec: &PipelineSpec,
    options: &LaunchOptions,
    stage: &str,
    worker_counts: &[usize],
    repetitions: usize,
    timeout: Duration,
) -> Result<Vec<ScaleSweepRow>, PipelineError> {
    let mut rows = Vec::with_capacity(worker_counts.len());
    for &workers in worker_counts {
        let mut options = options.clone();
        options.worker_overrides.insert(stage.to_string(), workers);
        let (_, stats) = repeat_runs(spec, &options, repetitions, timeout)?;
        rows.push(ScaleSweepRow { workers, stats });
    }
    Ok(rows)
}

/// One mode's result in a comparison.
#[derive(Debug, Clone)]
pub struct ModeRow {
    pub mode: SecurityMode,
    /// Median wall-clock time over the repetitions.
    pub median: Duration,
    pub stats: SampleStats,
    /// The last run's report, for result cross-checking.
    pub report: PipelineReport,
}

/// Runs the identical workload in all three security modes.
///
/// The median over the repetitions is the comparison statistic; it is
/// robust against a single slow run on a noisy machine.
pub fn mode_comparison(
    spec: &PipelineSpec,
    options: &LaunchOptions,
    repetitions: usize,
    timeout: Duration,
) -> Result<Vec<ModeRow>, PipelineError> {
    let mut rows = Vec::new();
    for mode in [
        SecurityMode::Clear,
        SecurityMode::Encrypted,
        SecurityMode::Enclave,
    ] {
        let mut spec = spec.clone();
        spec.mode = mode;
        let (mut reports, stats) = repeat_runs(&spec, options, repetitions, timeout)?;
        rows.push(ModeRow {
            mode,
            median: median(&stats.samples),
            stats,
            report: reports.pop().expect("at least one run"),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_samples() {
        let stats = sample_stats(vec![
            Duration::from_secs(2),
            Duration::from_secs(4),
            Duration::from_secs(6),
        ]);
        assert_eq!(stats.mean, Duration::from_secs(4));
        assert_eq!(stats.stddev, Duration::from_secs(2));
    }

    #[test]
    fn single_sample_has_zero_spread() {
        let stats = sample_stats(vec![Duration::from_millis(123)]);
        assert_eq!(stats.mean, Duration::from_millis(123));
        assert_eq!(stats.stddev, Duration::ZERO);
    }

    #[test]
    fn median_of_three_is_middle() {
        let samples = [
            Duration::from_secs(9),
            Duration::from_secs(1),
            Duration::from_secs(5),
        ];
        assert_eq!(median(&samples), Duration::from_secs(5));
    }
}

//! End-to-end pipeline runs over loopback TCP: correctness in all three
//! security modes, runtime scaling, and the stall watchdog.

use std::sync::Arc;
use std::time::Duration;

use streamshield::enclave::TransformRegistry;
use streamshield::flights::{
    delayed_flights_spec, generate_dataset, oracle_delayed_by_carrier, pipeline_carrier_stats,
    register_flight_transforms,
};
use streamshield::pipeline::{
    launch, run_pipeline, LaunchOptions, PipelineError, SecurityMode,
};

const TIMEOUT: Duration = Duration::from_secs(60);

fn test_key() -> [u8; 32] {
    [7u8; 32]
}

fn setup(rows: u64, seed: u64) -> (tempfile::TempDir, std::path::PathBuf, Arc<TransformRegistry>) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flights.csv");
    generate_dataset(&data, rows, 8, seed).unwrap();
    let registry = TransformRegistry::new();
    register_flight_transforms(&registry).unwrap();
    (dir, data, registry)
}

fn options(registry: &Arc<TransformRegistry>, data: &std::path::Path) -> LaunchOptions {
    let mut options = LaunchOptions::new(Arc::clone(registry));
    options.input_override = Some(data.to_path_buf());
    options.key = Some(test_key());
    options.connect_timeout = Duration::from_secs(15);
    options
}

fn run_mode(mode: SecurityMode, partitions: usize, workers: usize) {
    let (_dir, data, registry) = setup(5_000, 11);
    let spec = delayed_flights_spec(mode, partitions, workers, 256);
    let report = run_pipeline(&spec, options(&registry, &data), TIMEOUT).unwrap();

    let got = pipeline_carrier_stats(&report);
    let want = oracle_delayed_by_carrier(&data).unwrap();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.carrier, w.carrier);
        assert_eq!(g.delayed_count, w.delayed_count);
        assert!((g.delay_sum - w.delay_sum).abs() < 1e-6);
    }
    assert_eq!(report.malformed, 0);

    let mapper = report.stage("mapper").unwrap();
    let filter = report.stage("filter").unwrap();
    match mode {
        SecurityMode::Clear => {
            assert_eq!(mapper.enclave_calls + filter.enclave_calls, 0);
            assert_eq!(mapper.encrypt_ops + filter.encrypt_ops, 0);
        }
        SecurityMode::Encrypted => {
            assert_eq!(mapper.enclave_calls + filter.enclave_calls, 0);
            assert!(mapper.encrypt_ops > 0 && filter.encrypt_ops > 0);
        }
        SecurityMode::Enclave => {
            assert!(mapper.enclave_calls > 0 && filter.enclave_calls > 0);
            assert_eq!(mapper.encrypt_ops + filter.encrypt_ops, 0);
        }
    }
}

#[test]
fn clear_mode_matches_oracle() {
    run_mode(SecurityMode::Clear, 2, 2);
}

#[test]
fn encrypted_mode_matches_oracle() {
    run_mode(SecurityMode::Encrypted, 2, 2);
}

#[test]
fn enclave_mode_matches_oracle() {
    run_mode(SecurityMode::Enclave, 2, 2);
}

#[test]
fn single_worker_chain_matches_oracle() {
    run_mode(SecurityMode::Enclave, 1, 1);
}

#[test]
fn scaling_up_and_down_mid_run_keeps_result_exact() {
    let (_dir, data, registry) = setup(20_000, 23);
    let spec = delayed_flights_spec(SecurityMode::Clear, 2, 1, 64);
    let mut deployment = launch(&spec, options(&registry, &data)).unwrap();

    std::thread::sleep(Duration::from_millis(30));
    deployment.scale_stage("mapper", 4).unwrap();
    assert_eq!(deployment.live_workers("mapper"), Some(4));
    std::thread::sleep(Duration::from_millis(30));
    deployment.scale_stage("mapper", 2).unwrap();
    assert_eq!(deployment.live_workers("mapper"), Some(2));

    let report = deployment.await_completion(TIMEOUT).unwrap();
    let got = pipeline_carrier_stats(&report);
    let want = oracle_delayed_by_carrier(&data).unwrap();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!((g.carrier.as_str(), g.delayed_count), (w.carrier.as_str(), w.delayed_count));
        assert!((g.delay_sum - w.delay_sum).abs() < 1e-6);
    }
}

#[test]
fn scaling_unknown_or_fixed_stages_fails() {
    let (_dir, data, registry) = setup(2_000, 3);
    let spec = delayed_flights_spec(SecurityMode::Clear, 1, 1, 256);
    let mut deployment = launch(&spec, options(&registry, &data)).unwrap();
    assert!(matches!(
        deployment.scale_stage("nonexistent", 2),
        Err(PipelineError::UnknownStage(_))
    ));
    assert!(matches!(
        deployment.scale_stage("data_stream", 2),
        Err(PipelineError::CannotScale(_))
    ));
    assert!(matches!(
        deployment.scale_stage("mapper", 0),
        Err(PipelineError::CannotScale(_))
    ));
    deployment.await_completion(TIMEOUT).unwrap();
}

#[test]
fn wedged_worker_times_out_naming_the_stage() {
    let (_dir, data, registry) = setup(2_000, 5);
    let spec = delayed_flights_spec(SecurityMode::Clear, 1, 1, 256);
    let mut opts = options(&registry, &data);
    opts.wedge_stages.insert("filter".to_string());
    let err = run_pipeline(&spec, opts, Duration::from_secs(3)).unwrap_err();
    match err {
        PipelineError::Timeout { snapshot, .. } => {
            let stalled: Vec<&str> = snapshot
                .iter()
                .filter(|p| !p.finished)
                .map(|p| p.name.as_str())
                .collect();
            assert!(stalled.iter().any(|n| n.starts_with("filter")), "{stalled:?}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_lines_are_counted_not_fatal() {
    let (_dir, data, registry) = setup(1_000, 9);
    // Corrupt a few rows in place.
    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push_str("garbage,row\nAA,2008,1,1,0,not_a_number\n");
    std::fs::write(&data, &text).unwrap();

    let spec = delayed_flights_spec(SecurityMode::Enclave, 2, 2, 128);
    let report = run_pipeline(&spec, options(&registry, &data), TIMEOUT).unwrap();
    assert_eq!(report.malformed, 2);

    let got = pipeline_carrier_stats(&report);
    let want = oracle_delayed_by_carrier(&data).unwrap();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g.delayed_count, w.delayed_count);
    }
}

#[test]
fn missing_key_fails_at_launch() {
    let (_dir, data, registry) = setup(100, 1);
    let mut spec = delayed_flights_spec(SecurityMode::Encrypted, 1, 1, 64);
    spec.key_env = "STREAMSHIELD_TEST_UNSET_KEY".to_string();
    let mut opts = options(&registry, &data);
    opts.key = None;
    assert!(matches!(
        launch(&spec, opts),
        Err(PipelineError::Launch { .. })
    ));
}

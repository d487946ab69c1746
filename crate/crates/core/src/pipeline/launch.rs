//! Deploying and supervising a validated topology.
//!
//! Routers bind first so every port (including ephemeral ones) is known
//! before any connecting component starts. Components then launch in
//! dependency order: routers, workers, sink, sources. The resulting
//! [`Deployment`] supervises the run: it can scale worker stages while
//! frames are in flight and enforces a completion deadline with a
//! per-component progress snapshot on timeout.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::dataflow::GroupStat;
use crate::enclave::{key_from_env, EnclaveConfig, TransformDef, TransformRegistry, KEY_LEN};
use crate::metrics::StatsWriter;
use crate::routing::{run_bound_router, BoundRouter, RouterConfig, RouterReport};
use crate::wire::{Endpoint, DEFAULT_CONNECT_TIMEOUT};

use super::components::{
    run_sink, run_source, run_worker, ComponentReport, SinkConfig, SourceConfig, WorkerConfig,
    FLUSH_STREAM_BASE,
};
use super::spec::{validate, PipelineSpec, SecurityMode, StageRole};
use super::PipelineError;

/// Knobs that are deployment decisions, not topology.
#[derive(Clone)]
pub struct LaunchOptions {
    pub registry: Arc<TransformRegistry>,
    /// Where components write their per-second throughput stats.
    pub stats_dir: Option<PathBuf>,
    /// Sleep for simulated enclave crossings instead of only metering them.
    pub realistic_delay: bool,
    /// Base enclave parameters (budget, cost model) for every session.
    pub enclave: EnclaveConfig,
    /// Dataset path overriding whatever the source stage declares.
    pub input_override: Option<PathBuf>,
    /// Per-stage worker count overrides, `stage name -> count`.
    pub worker_overrides: HashMap<String, usize>,
    /// Explicit key; when absent and the mode needs one, the environment
    /// variable named by the spec is consulted.
    pub key: Option<[u8; KEY_LEN]>,
    /// Test hook: workers of these stages hold their first frame forever.
    pub wedge_stages: HashSet<String>,
    pub connect_timeout: Duration,
}

impl LaunchOptions {
    pub fn new(registry: Arc<TransformRegistry>) -> Self {
        LaunchOptions {
            registry,
            stats_dir: None,
            realistic_delay: false,
            enclave: EnclaveConfig::default(),
            input_override: None,
            worker_overrides: HashMap::new(),
            key: None,
            wedge_stages: HashSet::new(),
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
        }
    }
}

/// Progress of one component at a point in time.
#[derive(Debug, Clone)]
pub struct ComponentProgress {
    pub name: String,
    /// Frames handled so far.
    pub frames: u64,
    pub finished: bool,
}

enum Outcome {
    Component(ComponentReport),
    Router(RouterReport),
}

struct ComponentHandle {
    name: String,
    progress: Arc<AtomicU64>,
    handle: JoinHandle<Result<Outcome, PipelineError>>,
}

/// Live worker-stage bookkeeping for runtime scaling.
struct WorkerStageRuntime {
    stage_index: usize,
    name: String,
    transform: TransformDef,
    input: Endpoint,
    output: Endpoint,
    ingress_label: String,
    egress_label: String,
    /// Close counter of the router this stage pushes into.
    downstream_expected: Arc<AtomicUsize>,
    /// Peer-wait counter of the router this stage pulls from.
    upstream_wait: Arc<AtomicUsize>,
    /// Instances ever spawned; indexes instance names and flush streams.
    spawned: usize,
    /// Stop flags of live instances, oldest first.
    live_stops: Vec<Arc<AtomicBool>>,
    wedge: bool,
}

/// Per-stage aggregate of the final report.
#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub stage: String,
    pub components: usize,
    pub frames_in: u64,
    pub frames_out: u64,
    pub bytes_out: u64,
    pub enclave_calls: u64,
    pub encrypt_ops: u64,
    pub malformed: u64,
}

/// What a completed pipeline run yields.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub mode: SecurityMode,
    pub elapsed: Duration,
    /// In topology order; scaled stages aggregate all instances that ever ran.
    pub stages: Vec<StageReport>,
    /// The sink's merged result.
    pub groups: Vec<GroupStat>,
    /// Input lines dropped by parse transforms.
    pub malformed: u64,
}

impl PipelineReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// A running pipeline.
pub struct Deployment {
    mode: SecurityMode,
    key: Option<[u8; KEY_LEN]>,
    registry: Arc<TransformRegistry>,
    enclave: EnclaveConfig,
    stats_dir: Option<PathBuf>,
    connect_timeout: Duration,
    stage_order: Vec<String>,
    handles: Vec<ComponentHandle>,
    worker_stages: Vec<WorkerStageRuntime>,
    started: Instant,
}

fn launch_err(component: &str, reason: impl std::fmt::Display) -> PipelineError {
    PipelineError::Launch {
        component: component.to_string(),
        reason: reason.to_string(),
    }
}

/// Resolves the source dataset path and checks it exists, so a missing
/// file fails the launch instead of tripping a watchdog later.
fn input_path(spec: &PipelineSpec, options: &LaunchOptions) -> Result<PathBuf, PipelineError> {
    let source = &spec.stages[0];
    let input = options
        .input_override
        .clone()
        .or_else(|| source.input.clone().map(PathBuf::from))
        .ok_or_else(|| launch_err(&source.name, "no input dataset"))?;
    if !input.is_file() {
        return Err(launch_err(
            &source.name,
            format!("input dataset {} not found", input.display()),
        ));
    }
    Ok(input)
}

/// Binds, wires, and starts every component of a validated spec.
pub fn launch(spec: &PipelineSpec, options: LaunchOptions) -> Result<Deployment, PipelineError> {
    validate(spec, &options.registry)?;
    input_path(spec, &options)?;

    // Fail before anything runs if the mode needs a key we do not have.
    let key = match spec.mode {
        SecurityMode::Clear => None,
        _ => Some(match options.key {
            Some(key) => key,
            None => key_from_env(&spec.key_env)
                .map_err(|e| launch_err("deployment", format!("{} ({e})", spec.key_env)))?,
        }),
    };

    // Effective worker counts after overrides.
    let mut counts: Vec<usize> = spec.stages.iter().map(|s| s.workers).collect();
    for (stage, count) in &options.worker_overrides {
        let idx = spec
            .stages
            .iter()
            .position(|s| s.name == *stage)
            .ok_or_else(|| PipelineError::UnknownStage(stage.clone()))?;
        match spec.stages[idx].role {
            StageRole::Source | StageRole::Worker => {
                if *count == 0 {
                    return Err(PipelineError::CannotScale(stage.clone()));
                }
                counts[idx] = *count;
            }
            _ => return Err(PipelineError::CannotScale(stage.clone())),
        }
    }

    // Bind all routers up front and learn their real ports.
    let mut bound: Vec<Option<(usize, BoundRouter)>> = Vec::new();
    let mut in_ports: HashMap<usize, u16> = HashMap::new();
    let mut out_ports: HashMap<usize, u16> = HashMap::new();
    for (idx, stage) in spec.stages.iter().enumerate() {
        if stage.role != StageRole::Router {
            continue;
        }
        let config = RouterConfig::new(
            stage.name.clone(),
            stage.inbound.clone().unwrap(),
            stage.outbound.clone().unwrap(),
        );
        let router = BoundRouter::bind(config).map_err(|e| launch_err(&stage.name, e))?;
        in_ports.insert(idx, router.inbound_port());
        out_ports.insert(idx, router.outbound_port());
        bound.push(Some((idx, router)));
    }

    // Connect endpoint helper: spec host, resolved port.
    let resolved = |ep: &Option<Endpoint>, port: u16| -> Endpoint {
        let mut ep = ep.clone().expect("validated endpoint");
        if ep.host == "*" {
            ep.host = "127.0.0.1".to_string();
        }
        ep.port = port;
        ep
    };

    let stats_for = |dir: &Option<PathBuf>, node: &str| -> Result<Option<StatsWriter>, PipelineError> {
        match dir {
            None => Ok(None),
            Some(dir) => StatsWriter::create(dir, node)
                .map(Some)
                .map_err(|e| launch_err(node, e)),
        }
    };

    let mut deployment = Deployment {
        mode: spec.mode,
        key,
        registry: Arc::clone(&options.registry),
        enclave: EnclaveConfig {
            realistic_delay: options.realistic_delay,
            ..options.enclave.clone()
        },
        stats_dir: options.stats_dir.clone(),
        connect_timeout: options.connect_timeout,
        stage_order: spec.stages.iter().map(|s| s.name.clone()).collect(),
        handles: Vec::new(),
        worker_stages: Vec::new(),
        started: Instant::now(),
    };

    // Routers first: upstream close counting and downstream peer waiting.
    let mut expected_by_router: HashMap<usize, Arc<AtomicUsize>> = HashMap::new();
    let mut wait_by_router: HashMap<usize, Arc<AtomicUsize>> = HashMap::new();
    for (idx, router) in bound.drain(..).flatten() {
        let expected = Arc::new(AtomicUsize::new(counts[idx - 1]));
        let downstream = if spec.stages[idx + 1].role == StageRole::Sink {
            1
        } else {
            counts[idx + 1]
        };
        let wait = Arc::new(AtomicUsize::new(downstream));
        expected_by_router.insert(idx, Arc::clone(&expected));
        wait_by_router.insert(idx, Arc::clone(&wait));

        let mut router = router;
        router.config.wait_downstreams = Arc::clone(&wait);
        let stats = stats_for(&options.stats_dir, &router.config.name)?;
        let name = router.config.name.clone();
        let progress = Arc::new(AtomicU64::new(0));
        let handle = std::thread::Builder::new()
            .name(name.clone())
            .spawn(move || {
                run_bound_router(router, expected, stats)
                    .map(Outcome::Router)
                    .map_err(|e| PipelineError::Component {
                        name,
                        message: e.to_string(),
                    })
            })
            .map_err(|e| launch_err(&spec.stages[idx].name, e))?;
        deployment.handles.push(ComponentHandle {
            name: spec.stages[idx].name.clone(),
            progress,
            handle,
        });
    }

    // Worker stages.
    for (idx, stage) in spec.stages.iter().enumerate() {
        if stage.role != StageRole::Worker {
            continue;
        }
        let transform = options
            .registry
            .get(stage.transform.as_deref().unwrap())
            .expect("validated transform");
        let runtime = WorkerStageRuntime {
            stage_index: idx,
            name: stage.name.clone(),
            transform,
            input: resolved(&stage.inbound, out_ports[&(idx - 1)]),
            output: resolved(&stage.outbound, in_ports[&(idx + 1)]),
            ingress_label: spec.stages[idx - 2].name.clone(),
            egress_label: stage.name.clone(),
            downstream_expected: Arc::clone(&expected_by_router[&(idx + 1)]),
            upstream_wait: Arc::clone(&wait_by_router[&(idx - 1)]),
            spawned: 0,
            live_stops: Vec::new(),
            wedge: options.wedge_stages.contains(&stage.name),
        };
        deployment.worker_stages.push(runtime);
        let stage_slot = deployment.worker_stages.len() - 1;
        for _ in 0..counts[idx] {
            deployment.spawn_worker_instance(stage_slot, false)?;
        }
    }

    // Sink.
    let sink = spec.stages.last().unwrap();
    {
        let sink_idx = spec.stages.len() - 1;
        let transform = sink
            .transform
            .as_deref()
            .map(|name| options.registry.get(name).expect("validated transform"));
        let progress = Arc::new(AtomicU64::new(0));
        let cfg = SinkConfig {
            name: format!("{}_0", sink.name),
            stage: sink.name.clone(),
            input: resolved(&sink.inbound, out_ports[&(sink_idx - 1)]),
            transform,
            mode: spec.mode,
            key: deployment.key,
            ingress_label: spec.stages[sink_idx - 2].name.clone(),
            stats: stats_for(&options.stats_dir, &format!("{}_0", sink.name))?,
            progress: Arc::clone(&progress),
            connect_timeout: options.connect_timeout,
        };
        let handle = std::thread::Builder::new()
            .name(cfg.name.clone())
            .spawn(move || run_sink(cfg).map(Outcome::Component))
            .map_err(|e| launch_err(&sink.name, e))?;
        deployment.handles.push(ComponentHandle {
            name: format!("{}_0", sink.name),
            progress,
            handle,
        });
    }

    // Sources last: everything downstream is ready to pull.
    let source = &spec.stages[0];
    let input = input_path(spec, &options)?;
    let partitions = counts[0];
    for partition in 0..partitions {
        let name = format!("{}_{partition}", source.name);
        let progress = Arc::new(AtomicU64::new(0));
        let cfg = SourceConfig {
            name: name.clone(),
            stage: source.name.clone(),
            path: input.clone(),
            has_header: source.has_header,
            partition: partition as u32,
            partitions: partitions as u32,
            chunk_records: spec.chunk_records,
            output: resolved(&source.outbound, in_ports[&1]),
            mode: spec.mode,
            key: deployment.key,
            egress_label: source.name.clone(),
            stats: stats_for(&options.stats_dir, &name)?,
            progress: Arc::clone(&progress),
            connect_timeout: options.connect_timeout,
        };
        let handle = std::thread::Builder::new()
            .name(name.clone())
            .spawn(move || run_source(cfg).map(Outcome::Component))
            .map_err(|e| launch_err(&name, e))?;
        deployment.handles.push(ComponentHandle {
            name,
            progress,
            handle,
        });
    }

    Ok(deployment)
}

impl Deployment {
    /// Spawns one instance of a worker stage. With `adjust_counters`, the
    /// neighbouring routers learn about the extra peer first, so the close
    /// protocol stays exact.
    fn spawn_worker_instance(
        &mut self,
        stage_slot: usize,
        adjust_counters: bool,
    ) -> Result<(), PipelineError> {
        let stats_dir = self.stats_dir.clone();
        let stage = &mut self.worker_stages[stage_slot];
        let index = stage.spawned;
        let name = format!("{}_{index}", stage.name);
        if adjust_counters {
            stage.downstream_expected.fetch_add(1, Ordering::SeqCst);
            stage.upstream_wait.fetch_add(1, Ordering::SeqCst);
        }
        let stop = Arc::new(AtomicBool::new(false));
        let progress = Arc::new(AtomicU64::new(0));
        let stats = match &stats_dir {
            None => None,
            Some(dir) => Some(
                StatsWriter::create(dir, &name).map_err(|e| launch_err(&name, e))?,
            ),
        };
        let cfg = WorkerConfig {
            name: name.clone(),
            stage: stage.name.clone(),
            input: stage.input.clone(),
            output: stage.output.clone(),
            transform: stage.transform.clone(),
            mode: self.mode,
            key: self.key,
            ingress_label: stage.ingress_label.clone(),
            egress_label: stage.egress_label.clone(),
            registry: Arc::clone(&self.registry),
            enclave: self.enclave.clone(),
            flush_stream_id: FLUSH_STREAM_BASE + (stage.stage_index as u32) * 1000 + index as u32,
            stop: Arc::clone(&stop),
            wedge: stage.wedge,
            stats,
            progress: Arc::clone(&progress),
            connect_timeout: self.connect_timeout,
        };
        let handle = std::thread::Builder::new()
            .name(name.clone())
            .spawn(move || run_worker(cfg).map(Outcome::Component))
            .map_err(|e| launch_err(&name, e))?;
        stage.spawned += 1;
        stage.live_stops.push(stop);
        self.handles.push(ComponentHandle {
            name,
            progress,
            handle,
        });
        Ok(())
    }

    /// Adjusts a worker stage to `workers` live instances while frames are
    /// in flight. Growing spawns fresh instances; shrinking retires the
    /// newest instances, which drain, flush their state, and disconnect.
    pub fn scale_stage(&mut self, stage: &str, workers: usize) -> Result<(), PipelineError> {
        if workers == 0 {
            return Err(PipelineError::CannotScale(stage.to_string()));
        }
        let slot = match self.worker_stages.iter().position(|s| s.name == stage) {
            Some(slot) => slot,
            None => {
                return Err(if self.stage_order.iter().any(|name| name == stage) {
                    PipelineError::CannotScale(stage.to_string())
                } else {
                    PipelineError::UnknownStage(stage.to_string())
                })
            }
        };
        while self.worker_stages[slot].live_stops.len() < workers {
            self.spawn_worker_instance(slot, true)?;
        }
        let stage = &mut self.worker_stages[slot];
        while stage.live_stops.len() > workers {
            let stop = stage.live_stops.pop().unwrap();
            stop.store(true, Ordering::SeqCst);
            // The retiring worker still closes its push connection, so the
            // downstream close count stands; only the peer wait shrinks.
            stage.upstream_wait.fetch_sub(1, Ordering::SeqCst);
        }
        Ok(())
    }

    /// Live instances per worker stage, for tests and tooling.
    pub fn live_workers(&self, stage: &str) -> Option<usize> {
        self.worker_stages
            .iter()
            .find(|s| s.name == stage)
            .map(|s| s.live_stops.len())
    }

    /// Point-in-time progress of every component.
    pub fn progress_snapshot(&self) -> Vec<ComponentProgress> {
        self.handles
            .iter()
            .map(|h| ComponentProgress {
                name: h.name.clone(),
                frames: h.progress.load(Ordering::Relaxed),
                finished: h.handle.is_finished(),
            })
            .collect()
    }

    /// Waits for every component, or fails with a progress snapshot when
    /// the deadline passes. A late pipeline is a stuck pipeline: frames
    /// keep moving or something is wedged.
    pub fn await_completion(self, timeout: Duration) -> Result<PipelineReport, PipelineError> {
        let deadline = Instant::now() + timeout;
        loop {
            if self.handles.iter().all(|h| h.handle.is_finished()) {
                break;
            }
            if Instant::now() >= deadline {
                return Err(PipelineError::Timeout {
                    elapsed: self.started.elapsed(),
                    snapshot: self.progress_snapshot(),
                });
            }
            std::thread::sleep(Duration::from_millis(20));
        }

        let elapsed = self.started.elapsed();
        let mut by_stage: HashMap<String, StageReport> = HashMap::new();
        let mut groups = Vec::new();
        let mut malformed = 0u64;
        let mut failure: Option<PipelineError> = None;

        for handle in self.handles {
            let outcome = handle
                .handle
                .join()
                .unwrap_or_else(|_| {
                    Err(PipelineError::Component {
                        name: handle.name.clone(),
                        message: "panicked".to_string(),
                    })
                });
            match outcome {
                Ok(Outcome::Component(report)) => {
                    let entry = by_stage.entry(report.stage.clone()).or_default();
                    entry.stage = report.stage.clone();
                    entry.components += 1;
                    entry.frames_in += report.frames_in;
                    entry.frames_out += report.frames_out;
                    entry.bytes_out += report.bytes_out;
                    entry.enclave_calls += report.enclave_calls;
                    entry.encrypt_ops += report.encrypt_ops;
                    entry.malformed += report.malformed;
                    malformed += report.malformed;
                    if let Some(g) = report.groups {
                        groups = g;
                    }
                }
                Ok(Outcome::Router(report)) => {
                    let entry = by_stage.entry(report.name.clone()).or_default();
                    entry.stage = report.name.clone();
                    entry.components += 1;
                    entry.frames_out += report.frames;
                    entry.bytes_out += report.bytes;
                }
                Err(e) => failure = Some(failure.unwrap_or(e)),
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }

        let stages = self
            .stage_order
            .iter()
            .filter_map(|name| by_stage.remove(name))
            .collect();
        Ok(PipelineReport {
            mode: self.mode,
            elapsed,
            stages,
            groups,
            malformed,
        })
    }
}

/// Launches a spec and waits for it: the common whole-run entry point.
pub fn run_pipeline(
    spec: &PipelineSpec,
    options: LaunchOptions,
    timeout: Duration,
) -> Result<PipelineReport, PipelineError> {
    launch(spec, options)?.await_completion(timeout)
}

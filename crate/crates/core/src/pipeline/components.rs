//! Source, worker, and sink runtimes.
//!
//! Every component connects to its neighbouring routers, so the chain is
//! `source -> router -> worker* -> router -> ... -> sink` with routers as
//! the only bound sockets. Payload handling depends on the security mode:
//! clear chunks, cipher at the edges with plaintext processing, or the
//! full enclave call gate per chunk.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::dataflow::{Chunk, GroupStat, KeyedFold};
use crate::enclave::{
    derive_stage_key, Cipher, EnclaveConfig, EnclaveSession, SealedBlob, TransformDef,
    TransformKind, TransformRegistry, KEY_LEN,
};
use crate::metrics::StatsWriter;
use crate::wire::{Endpoint, Frame, PullEvent, PullSocket, PushSocket, WireError};

use super::spec::SecurityMode;
use super::PipelineError;

/// Stream ids at or above this mark carry flushed reducer state rather
/// than source data; they never collide with source partition ids.
pub const FLUSH_STREAM_BASE: u32 = 1_000_000;

/// What one finished component reports back to the supervisor.
#[derive(Debug, Clone, Default)]
pub struct ComponentReport {
    /// Instance name, `<stage>_<index>`.
    pub name: String,
    pub stage: String,
    pub frames_in: u64,
    pub frames_out: u64,
    pub bytes_out: u64,
    /// Call-gate round trips (nonzero only in enclave mode).
    pub enclave_calls: u64,
    /// Cipher operations performed outside any boundary.
    pub encrypt_ops: u64,
    /// Input lines dropped by a parse transform.
    pub malformed: u64,
    /// Final merged groups; sinks only.
    pub groups: Option<Vec<GroupStat>>,
}

fn component_err(name: &str, err: impl std::fmt::Display) -> PipelineError {
    PipelineError::Component {
        name: name.to_string(),
        message: err.to_string(),
    }
}

/// How a non-router component touches payloads.
enum CryptoContext {
    Clear,
    /// Wire encryption only; transforms see plaintext in untrusted memory.
    Edges {
        ingress: Option<Cipher>,
        egress: Option<Cipher>,
        ops: u64,
    },
    /// Everything inside the emulated boundary.
    Boundary(Box<EnclaveSession>),
}

/// Configuration of one source partition.
pub struct SourceConfig {
    pub name: String,
    pub stage: String,
    pub path: PathBuf,
    pub has_header: bool,
    /// This partition's index; doubles as the stream id.
    pub partition: u32,
    /// Total partitions reading the same file.
    pub partitions: u32,
    pub chunk_records: usize,
    pub output: Endpoint,
    pub mode: SecurityMode,
    pub key: Option<[u8; KEY_LEN]>,
    pub egress_label: String,
    pub stats: Option<StatsWriter>,
    pub progress: Arc<AtomicU64>,
    pub connect_timeout: Duration,
}

/// Streams one partition of a line-oriented dataset.
///
/// Lines are assigned round-robin by index, so `partitions` sources
/// produce equal shares of any input without coordination.
pub fn run_source(mut cfg: SourceConfig) -> Result<ComponentReport, PipelineError> {
    let name = cfg.name.clone();
    let file = File::open(&cfg.path)
        .map_err(|e| component_err(&name, format!("open {}: {e}", cfg.path.display())))?;
    let push = PushSocket::connect(std::slice::from_ref(&cfg.output), cfg.connect_timeout)
        .map_err(|e| component_err(&name, e))?;
    let egress = match cfg.mode {
        SecurityMode::Clear => None,
        _ => {
            let key = cfg.key.ok_or_else(|| component_err(&name, "no key"))?;
            Some(Cipher::new(&derive_stage_key(&key, &cfg.egress_label)))
        }
    };

    let mut report = ComponentReport {
        name: name.clone(),
        stage: cfg.stage.clone(),
        ..ComponentReport::default()
    };
    let mut seq_no = 0u64;
    let mut batch: Vec<String> = Vec::with_capacity(cfg.chunk_records);

    let send_batch = |batch: &mut Vec<String>,
                          seq_no: &mut u64,
                          report: &mut ComponentReport,
                          stats: &mut Option<StatsWriter>|
     -> Result<(), PipelineError> {
        if batch.is_empty() {
            return Ok(());
        }
        let chunk = Chunk::Lines(std::mem::take(batch));
        let payload = chunk.to_bytes();
        let frame = match &egress {
            None => Frame::data(cfg.partition, *seq_no, payload),
            Some(cipher) => {
                report.encrypt_ops += 1;
                Frame::encrypted(
                    cfg.partition,
                    *seq_no,
                    cipher.seal(cfg.partition, *seq_no, &payload).to_bytes(),
                )
            }
        };
        let written = push.send(&frame).map_err(|e| component_err(&name, e))?;
        if let Some(stats) = stats.as_mut() {
            stats.record(written);
        }
        report.frames_out += 1;
        report.bytes_out += written;
        cfg.progress.fetch_add(1, Ordering::Relaxed);
        *seq_no += 1;
        Ok(())
    };

    let reader = BufReader::new(file);
    let mut data_index = 0u64;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| component_err(&name, e))?;
        if line_no == 0 && cfg.has_header {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if data_index % cfg.partitions as u64 == cfg.partition as u64 {
            batch.push(line);
            if batch.len() >= cfg.chunk_records {
                send_batch(&mut batch, &mut seq_no, &mut report, &mut cfg.stats)?;
            }
        }
        data_index += 1;
    }
    send_batch(&mut batch, &mut seq_no, &mut report, &mut cfg.stats)?;

    push.send(&Frame::end_of_stream(cfg.partition, seq_no))
        .map_err(|e| component_err(&name, e))?;
    push.close();
    if let Some(stats) = cfg.stats.as_mut() {
        stats.finish();
    }
    Ok(report)
}

/// Configuration of one worker instance.
pub struct WorkerConfig {
    pub name: String,
    pub stage: String,
    pub input: Endpoint,
    pub output: Endpoint,
    pub transform: TransformDef,
    pub mode: SecurityMode,
    pub key: Option<[u8; KEY_LEN]>,
    pub ingress_label: String,
    pub egress_label: String,
    /// Registry the enclave session is created from (enclave mode).
    pub registry: Arc<TransformRegistry>,
    pub enclave: EnclaveConfig,
    /// Stream id for this worker's flushed state; unique per instance.
    pub flush_stream_id: u32,
    /// Cooperative retirement: finish the current frame, flush, leave.
    pub stop: Arc<AtomicBool>,
    /// Test hook: hold the first frame forever (until `stop`).
    pub wedge: bool,
    pub stats: Option<StatsWriter>,
    pub progress: Arc<AtomicU64>,
    pub connect_timeout: Duration,
}

fn make_crypto(
    mode: SecurityMode,
    key: Option<[u8; KEY_LEN]>,
    ingress_label: &str,
    egress_label: &str,
    registry: &Arc<TransformRegistry>,
    enclave: &EnclaveConfig,
    name: &str,
) -> Result<CryptoContext, PipelineError> {
    match mode {
        SecurityMode::Clear => Ok(CryptoContext::Clear),
        SecurityMode::Encrypted => {
            let key = key.ok_or_else(|| component_err(name, "no key"))?;
            Ok(CryptoContext::Edges {
                ingress: Some(Cipher::new(&derive_stage_key(&key, ingress_label))),
                egress: Some(Cipher::new(&derive_stage_key(&key, egress_label))),
                ops: 0,
            })
        }
        SecurityMode::Enclave => {
            let config = EnclaveConfig {
                key,
                ..enclave.clone()
            };
            let session =
                EnclaveSession::create_with_labels(registry, config, ingress_label, egress_label)
                    .map_err(|e| component_err(name, e))?;
            Ok(CryptoContext::Boundary(Box::new(session)))
        }
    }
}

/// Runs one worker until its upstream router closes or it is retired.
pub fn run_worker(mut cfg: WorkerConfig) -> Result<ComponentReport, PipelineError> {
    let name = cfg.name.clone();
    let mut crypto = make_crypto(
        cfg.mode,
        cfg.key,
        &cfg.ingress_label,
        &cfg.egress_label,
        &cfg.registry,
        &cfg.enclave,
        &name,
    )?;
    let pull =
        PullSocket::connect(&cfg.input, cfg.connect_timeout).map_err(|e| component_err(&name, e))?;
    let push = PushSocket::connect(std::slice::from_ref(&cfg.output), cfg.connect_timeout)
        .map_err(|e| component_err(&name, e))?;

    let mut report = ComponentReport {
        name: name.clone(),
        stage: cfg.stage.clone(),
        ..ComponentReport::default()
    };
    let mut state: Option<Vec<u8>> = None;
    let mut eos_streams: BTreeSet<u32> = BTreeSet::new();
    let mut retire_sent = false;

    'main: loop {
        // Retirement is cooperative and lossless: ask the upstream router
        // to stop sending, then keep processing until the connection
        // drains to a clean close.
        if cfg.stop.load(Ordering::SeqCst) && !retire_sent {
            pull.retire().ok();
            retire_sent = true;
        }
        let event = match pull.recv_event_timeout(Duration::from_millis(50)) {
            Ok(Some(event)) => event,
            Ok(None) => continue,
            Err(WireError::SocketClosed) => break 'main,
            Err(e) => return Err(component_err(&name, e)),
        };
        let frame = match event {
            PullEvent::Frame(frame) => frame,
            // Connect-mode sockets have exactly one upstream.
            PullEvent::UpstreamClosed => break 'main,
        };
        if cfg.wedge {
            while !cfg.stop.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(20));
            }
            break;
        }
        if frame.is_end_of_stream() {
            eos_streams.insert(frame.stream_id);
            continue;
        }
        report.frames_in += 1;

        let (stream_id, seq_no) = (frame.stream_id, frame.seq_no);
        let out = match &mut crypto {
            CryptoContext::Clear => {
                let chunk = Chunk::from_bytes(&frame.payload)
                    .ok_or_else(|| component_err(&name, "malformed chunk payload"))?;
                let (next, output) = (cfg.transform.func)(state.take(), chunk)
                    .map_err(|e| component_err(&name, e))?;
                state = next;
                Frame::data(stream_id, seq_no, output.to_bytes())
            }
            CryptoContext::Edges { ingress, egress, ops } => {
                let blob = SealedBlob::from_bytes(&frame.payload)
                    .map_err(|e| component_err(&name, e))?;
                let plain = ingress
                    .as_ref()
                    .unwrap()
                    .open(&blob, stream_id, seq_no)
                    .map_err(|e| component_err(&name, e))?;
                let chunk = Chunk::from_bytes(&plain)
                    .ok_or_else(|| component_err(&name, "malformed chunk payload"))?;
                let (next, output) = (cfg.transform.func)(state.take(), chunk)
                    .map_err(|e| component_err(&name, e))?;
                state = next;
                *ops += 2;
                let sealed = egress
                    .as_ref()
                    .unwrap()
                    .seal(stream_id, seq_no, &output.to_bytes());
                Frame::encrypted(stream_id, seq_no, sealed.to_bytes())
            }
            CryptoContext::Boundary(session) => {
                let blob = SealedBlob::from_bytes(&frame.payload)
                    .map_err(|e| component_err(&name, e))?;
                let (output, next) = session
                    .process(&cfg.transform.name, &blob, state.take(), stream_id, seq_no)
                    .map_err(|e| component_err(&name, e))?;
                state = next;
                Frame::encrypted(stream_id, seq_no, output.to_bytes())
            }
        };
        let written = push.send(&out).map_err(|e| component_err(&name, e))?;
        if let Some(stats) = cfg.stats.as_mut() {
            stats.record(written);
        }
        report.frames_out += 1;
        report.bytes_out += written;
        cfg.progress.fetch_add(1, Ordering::Relaxed);
    }

    // End of input: reducers flush accumulated state downstream, parse
    // transforms surrender their malformed-line count.
    let flushed = flush_state(&mut cfg, &mut crypto, state, &mut report, &push, &name)?;

    // Duplicate end-of-stream markers are deduplicated per stream by the
    // downstream router, so forwarding them is always safe.
    for stream_id in &eos_streams {
        push.send(&Frame::end_of_stream(*stream_id, 0))
            .map_err(|e| component_err(&name, e))?;
    }
    if flushed {
        push.send(&Frame::end_of_stream(cfg.flush_stream_id, 1))
            .map_err(|e| component_err(&name, e))?;
    }
    push.close();
    pull.close();
    if let CryptoContext::Edges { ops, .. } = &crypto {
        report.encrypt_ops = *ops;
    }
    if let CryptoContext::Boundary(session) = &crypto {
        report.enclave_calls = session.metrics().calls;
    }
    if let Some(stats) = cfg.stats.as_mut() {
        stats.finish();
    }
    Ok(report)
}

/// Runs the transform once more on the flush marker. Returns whether a
/// flush frame was emitted downstream.
fn flush_state(
    cfg: &mut WorkerConfig,
    crypto: &mut CryptoContext,
    state: Option<Vec<u8>>,
    report: &mut ComponentReport,
    push: &PushSocket,
    name: &str,
) -> Result<bool, PipelineError> {
    let kind = cfg.transform.kind;
    if kind != TransformKind::Reduce && kind != TransformKind::Parse {
        return Ok(false);
    }
    let (stream_id, seq_no) = (cfg.flush_stream_id, 0u64);
    let (final_state, frame) = match crypto {
        CryptoContext::Clear => {
            let (next, output) =
                (cfg.transform.func)(state, Chunk::Flush).map_err(|e| component_err(name, e))?;
            (next, Frame::data(stream_id, seq_no, output.to_bytes()))
        }
        CryptoContext::Edges { egress, ops, .. } => {
            let (next, output) =
                (cfg.transform.func)(state, Chunk::Flush).map_err(|e| component_err(name, e))?;
            *ops += 1;
            let sealed = egress
                .as_ref()
                .unwrap()
                .seal(stream_id, seq_no, &output.to_bytes());
            (next, Frame::encrypted(stream_id, seq_no, sealed.to_bytes()))
        }
        CryptoContext::Boundary(session) => {
            let (output, next) = session
                .flush(&cfg.transform.name, state, stream_id, seq_no)
                .map_err(|e| component_err(name, e))?;
            (next, Frame::encrypted(stream_id, seq_no, output.to_bytes()))
        }
    };

    if kind == TransformKind::Parse {
        // Parse state is the malformed-line counter; nothing flows on.
        if let Some(bytes) = final_state {
            report.malformed = serde_json::from_slice(&bytes).unwrap_or(0);
        }
        return Ok(false);
    }
    let written = push.send(&frame).map_err(|e| component_err(name, e))?;
    if let Some(stats) = cfg.stats.as_mut() {
        stats.record(written);
    }
    report.frames_out += 1;
    report.bytes_out += written;
    Ok(true)
}

/// Configuration of the sink.
pub struct SinkConfig {
    pub name: String,
    pub stage: String,
    pub input: Endpoint,
    /// Optional terminal fold applied to record chunks.
    pub transform: Option<TransformDef>,
    pub mode: SecurityMode,
    pub key: Option<[u8; KEY_LEN]>,
    pub ingress_label: String,
    pub stats: Option<StatsWriter>,
    pub progress: Arc<AtomicU64>,
    pub connect_timeout: Duration,
}

/// Consumes the final stage: folds record chunks, merges partial group
/// results, and reports the merged groups when the stream completes.
///
/// The sink is the subscriber and rightful owner of the result, so in the
/// encrypted modes it opens chunks with the upstream stage key and folds
/// in its own memory.
pub fn run_sink(mut cfg: SinkConfig) -> Result<ComponentReport, PipelineError> {
    let name = cfg.name.clone();
    let ingress = match cfg.mode {
        SecurityMode::Clear => None,
        _ => {
            let key = cfg.key.ok_or_else(|| component_err(&name, "no key"))?;
            Some(Cipher::new(&derive_stage_key(&key, &cfg.ingress_label)))
        }
    };
    let pull =
        PullSocket::connect(&cfg.input, cfg.connect_timeout).map_err(|e| component_err(&name, e))?;

    let mut report = ComponentReport {
        name: name.clone(),
        stage: cfg.stage.clone(),
        ..ComponentReport::default()
    };
    let mut merged = KeyedFold::new();
    let mut state: Option<Vec<u8>> = None;

    loop {
        let frame = match pull.recv() {
            Ok(frame) => frame,
            Err(WireError::SocketClosed) => break,
            Err(e) => return Err(component_err(&name, e)),
        };
        if frame.is_end_of_stream() {
            continue;
        }
        report.frames_in += 1;
        cfg.progress.fetch_add(1, Ordering::Relaxed);
        let payload = match &ingress {
            None => frame.payload.clone(),
            Some(cipher) => {
                let blob = SealedBlob::from_bytes(&frame.payload)
                    .map_err(|e| component_err(&name, e))?;
                report.encrypt_ops += 1;
                cipher
                    .open(&blob, frame.stream_id, frame.seq_no)
                    .map_err(|e| component_err(&name, e))?
            }
        };
        let chunk = Chunk::from_bytes(&payload)
            .ok_or_else(|| component_err(&name, "malformed chunk payload"))?;
        match chunk {
            Chunk::Groups(groups) => merged.merge_groups(&groups),
            Chunk::Flush => {}
            other => match &cfg.transform {
                Some(def) => {
                    let (next, output) =
                        (def.func)(state.take(), other).map_err(|e| component_err(&name, e))?;
                    state = next;
                    if let Chunk::Groups(groups) = output {
                        merged.merge_groups(&groups);
                    }
                }
                None => {}
            },
        }
        if let Some(stats) = cfg.stats.as_mut() {
            stats.record(payload.len() as u64);
        }
    }

    if let Some(def) = &cfg.transform {
        let (_, output) =
            (def.func)(state.take(), Chunk::Flush).map_err(|e| component_err(&name, e))?;
        if let Chunk::Groups(groups) = output {
            merged.merge_groups(&groups);
        }
    }

    pull.close();
    if let Some(stats) = cfg.stats.as_mut() {
        stats.finish();
    }
    report.groups = Some(merged.into_groups());
    Ok(report)
}

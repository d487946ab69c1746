//! The router component: a payload-oblivious broker between stages.
//!
//! A router binds both of its sockets; upstream workers push into it and
//! downstream workers pull out of it, so either side can scale without
//! touching the router's configuration. Data frames are forwarded without
//! inspecting payloads; the router never holds keys. End-of-stream frames
//! are absorbed and re-emitted downstream exactly once per stream, only
//! after every expected upstream connection has finished.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::metrics::StatsWriter;
use crate::wire::{Endpoint, Frame, PullEvent, PullSocket, PushSocket, WireError};

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("inbound and outbound endpoints must differ")]
    SameEndpoints,
    #[error("expected at least one upstream")]
    NoUpstreams,
    #[error("no frame arrived within {0:?}")]
    StalledStream(Duration),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Static configuration of one router.
#[derive(Debug, Clone)]
pub struct RouterConfig {
    pub name: String,
    /// Bind endpoint for the inbound pull socket.
    pub inbound: Endpoint,
    /// Bind endpoint for the outbound push socket.
    pub outbound: Endpoint,
    /// Abort if nothing arrives for this long. Disabled by default.
    pub idle_timeout: Option<Duration>,
    /// How many downstream peers must be connected before end-of-stream
    /// is broadcast, so no late-starting worker misses completion. Shared
    /// so a supervisor can adjust it when scaling the downstream stage.
    pub wait_downstreams: Arc<AtomicUsize>,
}

impl RouterConfig {
    pub fn new(name: impl Into<String>, inbound: Endpoint, outbound: Endpoint) -> Self {
        RouterConfig {
            name: name.into(),
            inbound,
            outbound,
            idle_timeout: None,
            wait_downstreams: Arc::new(AtomicUsize::new(1)),
        }
    }
}

/// What a finished router reports.
#[derive(Debug, Clone)]
pub struct RouterReport {
    pub name: String,
    /// Data frames forwarded (end-of-stream markers excluded).
    pub frames: u64,
    pub bytes: u64,
    pub duration: Duration,
}

/// Already-bound sockets for a router, so a launcher can reserve ports
/// (including ephemeral ones) before any component runs.
pub struct BoundRouter {
    pub config: RouterConfig,
    pub inbound: PullSocket,
    pub outbound: PushSocket,
}

impl BoundRouter {
    pub fn bind(config: RouterConfig) -> Result<Self, RouterError> {
        // Two port-0 endpoints resolve to distinct ephemeral ports.
        if config.inbound == config.outbound && config.inbound.port != 0 {
            return Err(RouterError::SameEndpoints);
        }
        let inbound = PullSocket::bind(&config.inbound)?;
        let outbound = PushSocket::bind(&config.outbound)?;
        Ok(BoundRouter {
            config,
            inbound,
            outbound,
        })
    }

    pub fn inbound_port(&self) -> u16 {
        self.inbound.local_port().unwrap_or(self.config.inbound.port)
    }

    pub fn outbound_port(&self) -> u16 {
        self.outbound.local_port().unwrap_or(self.config.outbound.port)
    }
}

/// Binds and runs a router until all expected upstreams finish.
pub fn run_router(
    config: RouterConfig,
    expected_upstreams: usize,
    stats: Option<StatsWriter>,
) -> Result<RouterReport, RouterError> {
    let bound = BoundRouter::bind(config)?;
    let expected = Arc::new(AtomicUsize::new(expected_upstreams));
    run_bound_router(bound, expected, stats)
}

/// Runs a pre-bound router.
///
/// `expected_upstreams` is shared so a supervisor can raise it when it
/// scales the upstream stage; every upstream that ever connects must close
/// before the router completes.
pub fn run_bound_router(
    router: BoundRouter,
    expected_upstreams: Arc<AtomicUsize>,
    mut stats: Option<StatsWriter>,
) -> Result<RouterReport, RouterError> {
    if expected_upstreams.load(Ordering::SeqCst) == 0 {
        return Err(RouterError::NoUpstreams);
    }
    let started = Instant::now();
    let mut frames = 0u64;
    let mut bytes = 0u64;
    let mut closed_upstreams = 0usize;
    let mut eos_streams: BTreeSet<u32> = BTreeSet::new();

    loop {
        let event = match router.config.idle_timeout {
            Some(idle) => match router.inbound.recv_event_timeout(idle)? {
                Some(event) => event,
                None => return Err(RouterError::StalledStream(idle)),
            },
            None => router.inbound.recv_event()?,
        };
        match event {
            PullEvent::Frame(frame) => {
                if frame.is_end_of_stream() {
                    eos_streams.insert(frame.stream_id);
                } else {
                    let written = router.outbound.send(&frame)?;
                    frames += 1;
                    bytes += frame.payload.len() as u64;
                    if let Some(stats) = stats.as_mut() {
                        stats.record(written);
                    }
                }
            }
            PullEvent::UpstreamClosed => {
                closed_upstreams += 1;
                // Per-connection ordering guarantees every frame of a
                // closed upstream was already delivered, so once the last
                // expected upstream closes nothing is left in flight.
                if closed_upstreams >= expected_upstreams.load(Ordering::SeqCst) {
                    break;
                }
            }
        }
    }

    // Every downstream peer must be in the rotation before completion is
    // announced; peers join asynchronously at startup.
    let wait_deadline = Instant::now() + Duration::from_secs(10);
    while router.outbound.peer_count() < router.config.wait_downstreams.load(Ordering::SeqCst).max(1)
        && Instant::now() < wait_deadline
    {
        std::thread::sleep(Duration::from_millis(5));
    }

    for stream_id in &eos_streams {
        router.outbound.send(&Frame::end_of_stream(*stream_id, 0))?;
    }
    router.outbound.close();
    router.inbound.close();
    if let Some(stats) = stats.as_mut() {
        stats.finish();
    }

    Ok(RouterReport {
        name: router.config.name,
        frames,
        bytes,
        duration: started.elapsed(),
    })
}

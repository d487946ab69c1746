//! Fair-queuing pull socket.
//!
//! Each inbound connection feeds its own FIFO queue; delivery rotates over
//! the non-empty queues so no upstream can starve the others. Frames from
//! one connection are never reordered. A connection's `UpstreamClosed`
//! event is delivered only after all of its frames.

use std::collections::VecDeque;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{connect_with_retry, Endpoint, Frame, WireError};

/// What `recv_event` can observe.
#[derive(Debug)]
pub enum PullEvent {
    Frame(Frame),
    /// One upstream connection reached EOF (after its queue drained).
    UpstreamClosed,
}

struct ConnQueue {
    frames: VecDeque<Frame>,
    eof: bool,
    /// The close event has been delivered; slot is inert.
    retired: bool,
}

struct Shared {
    queues: Vec<ConnQueue>,
    /// Index of the next queue to consider.
    fq_cursor: usize,
    connections_seen: u64,
    closed: bool,
}

struct Inner {
    shared: Mutex<Shared>,
    cond: Condvar,
    shutdown: AtomicBool,
    /// Clones of every accepted stream, severed on close so reader
    /// threads unblock and the peers observe the disconnect.
    streams: Mutex<Vec<TcpStream>>,
}

/// Inbound side of the push/pull pair.
pub struct PullSocket {
    inner: Arc<Inner>,
    /// Back-channel of a connect-mode socket, for cooperative retirement.
    control: Option<TcpStream>,
    local_port: Option<u16>,
    /// Fixed connection count for connect-mode sockets; bind-mode sockets
    /// accept an open-ended set.
    fixed_upstreams: Option<usize>,
    accept_handle: Option<std::thread::JoinHandle<()>>,
}

impl PullSocket {
    /// Binds and starts accepting upstream connections.
    pub fn bind(endpoint: &Endpoint) -> Result<Self, WireError> {
        let listener = TcpListener::bind(endpoint.bind_addr()).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AddrInUse {
                WireError::BindAddressInUse(endpoint.clone())
            } else {
                WireError::Io(e.to_string())
            }
        })?;
        let local_port = listener.local_addr().map(|a| a.port()).ok();
        listener
            .set_nonblocking(true)
            .map_err(|e| WireError::Io(e.to_string()))?;

        let inner = Arc::new(Inner {
            shared: Mutex::new(Shared {
                queues: Vec::new(),
                fq_cursor: 0,
                connections_seen: 0,
                closed: false,
            }),
            cond: Condvar::new(),
            shutdown: AtomicBool::new(false),
            streams: Mutex::new(Vec::new()),
        });

        let accept_inner = Arc::clone(&inner);
        let accept_handle = std::thread::spawn(move || {
            while !accept_inner.shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        stream.set_nodelay(true).ok();
                        attach_connection(&accept_inner, stream);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Err(_) => break,
                }
            }
        });

        Ok(PullSocket {
            inner,
            control: None,
            local_port,
            fixed_upstreams: None,
            accept_handle: Some(accept_handle),
        })
    }

    /// Connects to a single bound push peer, retrying until `deadline`.
    pub fn connect(endpoint: &Endpoint, deadline: Duration) -> Result<Self, WireError> {
        let stream = connect_with_retry(endpoint, deadline)?;
        let control = stream.try_clone().ok();
        let inner = Arc::new(Inner {
            shared: Mutex::new(Shared {
                queues: Vec::new(),
                fq_cursor: 0,
                connections_seen: 0,
                closed: false,
            }),
            cond: Condvar::new(),
            shutdown: AtomicBool::new(false),
            streams: Mutex::new(Vec::new()),
        });
        attach_connection(&inner, stream);
        Ok(PullSocket {
            inner,
            control,
            local_port: None,
            fixed_upstreams: Some(1),
            accept_handle: None,
        })
    }

    /// Asks the upstream push socket to retire this connection: the peer
    /// leaves the rotation and half-closes, so every frame already sent
    /// still arrives, followed by a normal upstream close.
    pub fn retire(&self) -> Result<(), WireError> {
        use std::io::Write;
        match &self.control {
            Some(stream) => {
                let mut stream = stream;
                stream
                    .write_all(&[0x52])
                    .map_err(|e| WireError::Io(e.to_string()))
            }
            None => Err(WireError::Io("retire needs a connect-mode socket".into())),
        }
    }

    /// Port actually bound (resolves port 0).
    pub fn local_port(&self) -> Option<u16> {
        self.local_port
    }

    /// Blocks for the next frame, skipping upstream-close events.
    ///
    /// Returns `SocketClosed` once every upstream of a connect-mode socket
    /// has closed and all queues are drained, or after [`close`] on a
    /// bound socket.
    pub fn recv(&self) -> Result<Frame, WireError> {
        loop {
            match self.recv_event()? {
                PullEvent::Frame(frame) => return Ok(frame),
                PullEvent::UpstreamClosed => {
                    if self.fixed_upstreams.is_some() && self.all_retired() {
                        return Err(WireError::SocketClosed);
                    }
                }
            }
        }
    }

    /// Blocks for the next event: one frame, or one upstream close.
    pub fn recv_event(&self) -> Result<PullEvent, WireError> {
        match self.recv_event_deadline(None)? {
            Some(event) => Ok(event),
            None => unreachable!("no deadline"),
        }
    }

    /// As `recv_event`, but returns `Ok(None)` once `timeout` elapses.
    pub fn recv_event_timeout(&self, timeout: Duration) -> Result<Option<PullEvent>, WireError> {
        self.recv_event_deadline(Some(Instant::now() + timeout))
    }

    fn recv_event_deadline(
        &self,
        deadline: Option<Instant>,
    ) -> Result<Option<PullEvent>, WireError> {
        let mut shared = self.inner.shared.lock().unwrap();
        loop {
            if let Some(event) = Self::next_event(&mut shared) {
                return Ok(Some(event));
            }
            if shared.closed {
                return Err(WireError::SocketClosed);
            }
            match deadline {
                None => {
                    shared = self.inner.cond.wait(shared).unwrap();
                }
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Ok(None);
                    }
                    let (guard, _) = self.inner.cond.wait_timeout(shared, d - now).unwrap();
                    shared = guard;
                }
            }
        }
    }

    /// Rotating scan starting at `fq_cursor`; serves at most one event.
    fn next_event(shared: &mut Shared) -> Option<PullEvent> {
        let n = shared.queues.len();
        if n == 0 {
            return None;
        }
        let start = shared.fq_cursor % n;
        for off in 0..n {
            let idx = (start + off) % n;
            let queue = &mut shared.queues[idx];
            if queue.retired {
                continue;
            }
            if let Some(frame) = queue.frames.pop_front() {
                shared.fq_cursor = idx + 1;
                return Some(PullEvent::Frame(frame));
            }
            if queue.eof {
                queue.retired = true;
                shared.fq_cursor = idx + 1;
                return Some(PullEvent::UpstreamClosed);
            }
        }
        None
    }

    fn all_retired(&self) -> bool {
        let shared = self.inner.shared.lock().unwrap();
        shared.queues.iter().all(|q| q.retired)
            && shared.connections_seen as usize >= self.fixed_upstreams.unwrap_or(1)
    }

    /// Total connections ever accepted.
    pub fn connections_seen(&self) -> u64 {
        self.inner.shared.lock().unwrap().connections_seen
    }

    /// Stops accepting and wakes any blocked receiver with `SocketClosed`
    /// once the queues drain.
    pub fn close(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        {
            let mut shared = self.inner.shared.lock().unwrap();
            shared.closed = true;
            self.inner.cond.notify_all();
        }
        for stream in self.inner.streams.lock().unwrap().drain(..) {
            stream.shutdown(std::net::Shutdown::Both).ok();
        }
    }
}

impl Drop for PullSocket {
    fn drop(&mut self) {
        self.close();
        if let Some(handle) = self.accept_handle.take() {
            handle.join().ok();
        }
    }
}

fn attach_connection(inner: &Arc<Inner>, stream: TcpStream) {
    if let Ok(clone) = stream.try_clone() {
        inner.streams.lock().unwrap().push(clone);
    }
    let slot = {
        let mut shared = inner.shared.lock().unwrap();
        shared.connections_seen += 1;
        shared.queues.push(ConnQueue {
            frames: VecDeque::new(),
            eof: false,
            retired: false,
        });
        shared.queues.len() - 1
    };
    let reader_inner = Arc::clone(inner);
    std::thread::spawn(move || {
        let mut stream = stream;
        loop {
            match Frame::read_from(&mut stream) {
                Ok(Some(frame)) => {
                    let mut shared = reader_inner.shared.lock().unwrap();
                    if shared.closed {
                        break;
                    }
                    shared.queues[slot].frames.push_back(frame);
                    reader_inner.cond.notify_all();
                }
                // Clean EOF and read errors both end the connection; the
                // frames already queued still get delivered first.
                Ok(None) | Err(_) => break,
            }
        }
        let mut shared = reader_inner.shared.lock().unwrap();
        shared.queues[slot].eof = true;
        reader_inner.cond.notify_all();
    });
}

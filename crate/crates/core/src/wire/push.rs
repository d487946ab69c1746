//! Round-robin push socket.
//!
//! Data frames go to exactly one peer, selected by a round-robin cursor
//! over the current peer list. End-of-stream frames are broadcast to every
//! peer so the whole downstream fan-out can terminate. A peer that fails a
//! write is dropped and the in-flight frame is re-dispatched to the next
//! peer in rotation. A downstream peer can also retire cooperatively: a
//! single byte written back on its connection takes it out of the
//! rotation and half-closes it, so every frame already sent is still
//! delivered before the peer sees end of input.

use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use super::{connect_with_retry, Endpoint, Frame, WireError};

struct Peer {
    id: u64,
    stream: TcpStream,
}

struct Shared {
    peers: Vec<Peer>,
    rr_counter: u64,
    next_id: u64,
    closed: bool,
}

struct Inner {
    shared: Mutex<Shared>,
    cond: Condvar,
    shutdown: AtomicBool,
}

/// Outbound side of the push/pull pair.
pub struct PushSocket {
    inner: Arc<Inner>,
    local_port: Option<u16>,
    /// Bound sockets wait for a first peer instead of failing `NoPeers`;
    /// downstream components join whenever they come up.
    accepting: bool,
    accept_handle: Option<std::thread::JoinHandle<()>>,
}

impl PushSocket {
    /// Connects to a fixed set of downstream pull peers, retrying each
    /// until `deadline`.
    pub fn connect(endpoints: &[Endpoint], deadline: Duration) -> Result<Self, WireError> {
        if endpoints.is_empty() {
            return Err(WireError::NoPeers);
        }
        let mut peers = Vec::with_capacity(endpoints.len());
        for (id, endpoint) in endpoints.iter().enumerate() {
            peers.push(Peer {
                id: id as u64,
                stream: connect_with_retry(endpoint, deadline)?,
            });
        }
        Ok(PushSocket {
            inner: Arc::new(Inner {
                shared: Mutex::new(Shared {
                    next_id: peers.len() as u64,
                    peers,
                    rr_counter: 0,
                    closed: false,
                }),
                cond: Condvar::new(),
                shutdown: AtomicBool::new(false),
            }),
            local_port: None,
            accepting: false,
            accept_handle: None,
        })
    }

    /// Binds and lets downstream peers connect into the rotation.
    ///
    /// A newly connected peer takes part starting with the next dispatch;
    /// a lost peer silently leaves the rotation.
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
                peers: Vec::new(),
                rr_counter: 0,
                next_id: 0,
                closed: false,
            }),
            cond: Condvar::new(),
            shutdown: AtomicBool::new(false),
        });
        let accept_inner = Arc::clone(&inner);
        let accept_handle = std::thread::spawn(move || {
            while !accept_inner.shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        stream.set_nodelay(true).ok();
                        let monitor = stream.try_clone().ok();
                        let id = {
                            let mut shared = accept_inner.shared.lock().unwrap();
                            let id = shared.next_id;
                            shared.next_id += 1;
                            shared.peers.push(Peer { id, stream });
                            accept_inner.cond.notify_all();
                            id
                        };
                        if let Some(monitor) = monitor {
                            let inner = Arc::clone(&accept_inner);
                            std::thread::spawn(move || watch_for_retire(inner, monitor, id));
                        }
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(10));
                    }
                    Err(_) => break,
                }
            }
        });

        Ok(PushSocket {
            inner,
            local_port,
            accepting: true,
            accept_handle: Some(accept_handle),
        })
    }

    pub fn local_port(&self) -> Option<u16> {
        self.local_port
    }

    pub fn peer_count(&self) -> usize {
        self.inner.shared.lock().unwrap().peers.len()
    }

    /// Sends one frame; returns the bytes written.
    ///
    /// Data frames go to `peers[rr_counter mod n]`; end-of-stream frames
    /// are broadcast. On a bound socket with no peers yet, blocks until
    /// one connects.
    pub fn send(&self, frame: &Frame) -> Result<u64, WireError> {
        let bytes = frame.encode()?;
        let mut shared = self.inner.shared.lock().unwrap();

        if frame.is_end_of_stream() {
            let mut written = 0u64;
            for peer in &mut shared.peers {
                if peer.stream.write_all(&bytes).is_ok() {
                    written += bytes.len() as u64;
                }
            }
            return Ok(written);
        }

        loop {
            if shared.closed {
                return Err(WireError::SocketClosed);
            }
            if shared.peers.is_empty() {
                if self.accepting {
                    shared = self.inner.cond.wait(shared).unwrap();
                    continue;
                }
                return Err(WireError::NoPeers);
            }
            let idx = (shared.rr_counter % shared.peers.len() as u64) as usize;
            match shared.peers[idx].stream.write_all(&bytes) {
                Ok(()) => {
                    shared.rr_counter += 1;
                    return Ok(bytes.len() as u64);
                }
                Err(_) => {
                    // Drop the dead peer and re-dispatch the same frame to
                    // whoever is next in the shortened rotation.
                    shared.peers.remove(idx);
                }
            }
        }
    }

    /// Flushes and closes the write side of every peer connection, which
    /// downstream pull sockets observe as upstream close.
    pub fn close(&self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        let mut shared = self.inner.shared.lock().unwrap();
        shared.closed = true;
        for peer in &mut shared.peers {
            peer.stream.flush().ok();
            peer.stream.shutdown(Shutdown::Write).ok();
        }
        shared.peers.clear();
        self.inner.cond.notify_all();
    }
}

/// Watches one downstream peer's back-channel. A received byte means the
/// peer retires cooperatively; end-of-file or an error means it is gone.
/// Either way it leaves the rotation before another frame can be lost on
/// it, and its write side is shut down so a retiring peer can drain
/// everything already sent and then observe a clean end of input.
fn watch_for_retire(inner: Arc<Inner>, mut stream: TcpStream, id: u64) {
    let mut buf = [0u8; 1];
    let _ = stream.read(&mut buf);
    let mut shared = inner.shared.lock().unwrap();
    if let Some(pos) = shared.peers.iter().position(|p| p.id == id) {
        let peer = shared.peers.remove(pos);
        peer.stream.shutdown(Shutdown::Write).ok();
    }
}

impl Drop for PushSocket {
    fn drop(&mut self) {
        self.close();
        if let Some(handle) = self.accept_handle.take() {
            handle.join().ok();
        }
    }
}

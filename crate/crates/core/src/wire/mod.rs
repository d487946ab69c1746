//! Framed push/pull transport over TCP.
//!
//! Two socket types cover the whole pipeline: a [`PushSocket`] distributes
//! frames round-robin over its connected peers, a [`PullSocket`] merges
//! inbound connections with fair queuing. Both can either bind (routers) or
//! connect (workers, sources, sinks); connecting retries with exponential
//! backoff so components can start in any order.

mod frame;
mod pull;
mod push;

pub use frame::{Frame, FrameFlags, FRAME_HEADER_LEN, MAX_PAYLOAD};
pub use pull::{PullEvent, PullSocket};
pub use push::PushSocket;

use std::fmt;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default deadline for connect-side retries.
pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the frame limit")]
    PayloadTooLarge(usize),
    #[error("input ends before a complete frame")]
    Truncated,
    #[error("declared frame length {0} is below the fixed header size")]
    MalformedHeader(u32),
    #[error("undefined flag bits 0x{0:02x}")]
    UnknownFlagBits(u8),
    #[error("push socket has no connected peers")]
    NoPeers,
    #[error("address {0} already in use")]
    BindAddressInUse(Endpoint),
    #[error("could not connect to {0} within the deadline")]
    ConnectTimeout(Endpoint),
    #[error("socket closed")]
    SocketClosed,
    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// A `host:port` pair, parseable from the `tcp://host:port` form used in
/// topology files. Host `*` means "bind on all interfaces".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Endpoint {
            host: host.into(),
            port,
        }
    }

    pub fn loopback(port: u16) -> Self {
        Endpoint::new("127.0.0.1", port)
    }

    /// Parses `tcp://host:port` (the scheme prefix is optional).
    pub fn parse(text: &str) -> Result<Self, WireError> {
        let rest = text.strip_prefix("tcp://").unwrap_or(text);
        let (host, port) = rest
            .rsplit_once(':')
            .ok_or_else(|| WireError::InvalidEndpoint(text.to_string()))?;
        if host.is_empty() {
            return Err(WireError::InvalidEndpoint(text.to_string()));
        }
        let port: u16 = port
            .parse()
            .map_err(|_| WireError::InvalidEndpoint(text.to_string()))?;
        Ok(Endpoint::new(host, port))
    }

    /// Address to bind on; `*` maps to all interfaces.
    pub fn bind_addr(&self) -> String {
        if self.host == "*" {
            format!("0.0.0.0:{}", self.port)
        } else {
            format!("{}:{}", self.host, self.port)
        }
    }

    pub fn connect_addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tcp://{}:{}", self.host, self.port)
    }
}

impl TryFrom<String> for Endpoint {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Endpoint::parse(&value).map_err(|e| e.to_string())
    }
}

impl From<Endpoint> for String {
    fn from(value: Endpoint) -> Self {
        value.to_string()
    }
}

/// Connects with exponential backoff until `deadline` elapses.
///
/// Peers may not be up yet when a component starts; retrying here is what
/// makes component start order irrelevant.
pub(crate) fn connect_with_retry(
    endpoint: &Endpoint,
    deadline: Duration,
) -> Result<TcpStream, WireError> {
    let start = Instant::now();
    let mut backoff = Duration::from_millis(20);
    loop {
        let addrs = endpoint.connect_addr().to_socket_addrs();
        if let Ok(addrs) = addrs {
            for addr in addrs {
                if let Ok(stream) = TcpStream::connect_timeout(&addr, Duration::from_secs(2)) {
                    stream.set_nodelay(true).ok();
                    return Ok(stream);
                }
            }
        }
        if start.elapsed() >= deadline {
            return Err(WireError::ConnectTimeout(endpoint.clone()));
        }
        std::thread::sleep(backoff.min(deadline.saturating_sub(start.elapsed())));
        backoff = (backoff * 2).min(Duration::from_millis(500));
    }
}

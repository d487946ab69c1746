//! Emulated trusted-execution boundary.
//!
//! The emulator enforces what an SGX enclave makes observable from the
//! outside: a call gate with copy-in/copy-out cost, a hard memory budget
//! reserved up front, a transform registry frozen before the first session
//! exists, no I/O inside the boundary, and authenticated encryption of
//! every chunk crossing it.

mod cost;
mod registry;
mod seal;
mod session;

pub use cost::{power_of_two_sizes, sweep_chunk_sizes, ChunkSweepRow, CostModel, Direction};
pub use registry::{TransformDef, TransformFn, TransformKind, TransformRegistry};
pub use seal::{derive_stage_key, Cipher, SealedBlob, KEY_LEN, NONCE_LEN, TAG_LEN};
pub use session::{EnclaveConfig, EnclaveSession, SessionMetrics};

use thiserror::Error;

/// Environment variable conventionally holding the hex-encoded 256-bit key.
pub const KEY_ENV_DEFAULT: &str = "STREAMSHIELD_KEY";

#[derive(Debug, Error)]
pub enum EnclaveError {
    #[error("transform registry is frozen: a session was already created")]
    RegistrationAfterCreate,
    #[error("transform {0:?} is already registered")]
    DuplicateName(String),
    #[error("no key provisioned")]
    NoKey,
    #[error("cannot reserve {0} bytes for the enclave")]
    BudgetUnsatisfiable(usize),
    #[error("transform {0:?} is not registered")]
    UnknownTransform(String),
    #[error("call needs {requested} bytes but only {available} of the budget are free")]
    MemoryBudgetExceeded { requested: usize, available: usize },
    #[error("authentication failed")]
    AuthFailure,
    #[error("nonce for stream {stream_id} seq {seq_no} was already used in this session")]
    NonceReuse { stream_id: u32, seq_no: u64 },
    #[error("transform {0:?} failed")]
    TransformPanic(String),
    #[error("chunk payload did not deserialize")]
    MalformedChunk,
    #[error("invalid key material: {0}")]
    BadKey(String),
}

/// Reads a 256-bit key from a hex-encoded environment variable.
pub fn key_from_env(var: &str) -> Result<[u8; KEY_LEN], EnclaveError> {
    let hex_str = std::env::var(var).map_err(|_| EnclaveError::NoKey)?;
    let bytes = hex::decode(hex_str.trim()).map_err(|e| EnclaveError::BadKey(e.to_string()))?;
    bytes
        .try_into()
        .map_err(|_| EnclaveError::BadKey("key must be 32 bytes".into()))
}

//! Emulated enclave sessions.
//!
//! A session owns its pre-reserved memory budget, a frozen transform map,
//! and the sealing keys. `process` models the full call-gate round trip:
//! charge the crossing, account copy-in against the budget, decrypt inside
//! the boundary, run the transform, re-encrypt, account copy-out, release
//! the memory. The simulated crossing time is always recorded in the
//! metrics and only actually slept when realistic delay is on.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::Duration;

use crate::dataflow::Chunk;

use super::cost::CostModel;
use super::registry::{OpaqueState, TransformDef, TransformRegistry};
use super::seal::{derive_stage_key, Cipher, SealedBlob, KEY_LEN};
use super::EnclaveError;

/// Construction parameters for a session.
#[derive(Clone)]
pub struct EnclaveConfig {
    /// Usable protected memory. ~90 MiB of the page cache is what
    /// application pages can actually occupy.
    pub memory_budget: usize,
    pub cost: CostModel,
    /// Pre-provisioned 256-bit master secret; attestation and key
    /// establishment are assumed already done.
    pub key: Option<[u8; KEY_LEN]>,
    /// Sleep for the simulated crossing time instead of only recording it.
    pub realistic_delay: bool,
}

impl Default for EnclaveConfig {
    fn default() -> Self {
        EnclaveConfig {
            memory_budget: 90 * 1024 * 1024,
            cost: CostModel::default(),
            key: None,
            realistic_delay: false,
        }
    }
}

/// Counters over a session's lifetime.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionMetrics {
    pub calls: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub simulated_crossing_time: Duration,
}

/// One emulated enclave instance.
pub struct EnclaveSession {
    memory_budget: usize,
    cost: CostModel,
    realistic_delay: bool,
    transforms: HashMap<String, TransformDef>,
    ingress: Cipher,
    egress: Cipher,
    used_memory: usize,
    metrics: SessionMetrics,
    egress_nonces: HashSet<(u32, u64)>,
    // Models the up-front EPC reservation; allocation happens at create so
    // per-call timing never includes it.
    _reservation: Vec<u8>,
}

impl EnclaveSession {
    /// Creates a session sealing with the master key on both sides.
    pub fn create(
        registry: &Arc<TransformRegistry>,
        config: EnclaveConfig,
    ) -> Result<Self, EnclaveError> {
        let key = config.key.ok_or(EnclaveError::NoKey)?;
        Self::create_inner(registry, config, Cipher::new(&key), Cipher::new(&key))
    }

    /// Creates a session that opens input sealed by the `ingress_label`
    /// stage and seals output under the `egress_label` stage subkey.
    pub fn create_with_labels(
        registry: &Arc<TransformRegistry>,
        config: EnclaveConfig,
        ingress_label: &str,
        egress_label: &str,
    ) -> Result<Self, EnclaveError> {
        let key = config.key.ok_or(EnclaveError::NoKey)?;
        let ingress = Cipher::new(&derive_stage_key(&key, ingress_label));
        let egress = Cipher::new(&derive_stage_key(&key, egress_label));
        Self::create_inner(registry, config, ingress, egress)
    }

    fn create_inner(
        registry: &Arc<TransformRegistry>,
        config: EnclaveConfig,
        ingress: Cipher,
        egress: Cipher,
    ) -> Result<Self, EnclaveError> {
        if config.memory_budget == 0 {
            return Err(EnclaveError::BudgetUnsatisfiable(0));
        }
        let mut reservation = Vec::new();
        reservation
            .try_reserve_exact(config.memory_budget)
            .map_err(|_| EnclaveError::BudgetUnsatisfiable(config.memory_budget))?;

        Ok(EnclaveSession {
            memory_budget: config.memory_budget,
            cost: config.cost,
            realistic_delay: config.realistic_delay,
            transforms: registry.freeze(),
            ingress,
            egress,
            used_memory: 0,
            metrics: SessionMetrics::default(),
            egress_nonces: HashSet::new(),
            _reservation: reservation,
        })
    }

    pub fn memory_budget(&self) -> usize {
        self.memory_budget
    }

    pub fn used_memory(&self) -> usize {
        self.used_memory
    }

    pub fn metrics(&self) -> &SessionMetrics {
        &self.metrics
    }

    pub fn transform_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.transforms.keys().cloned().collect();
        names.sort();
        names
    }

    /// Seals a chunk under the session's egress key, nonce derived from
    /// the frame identity. Re-sealing the same identity is nonce reuse.
    pub fn encrypt(
        &mut self,
        plaintext: &[u8],
        stream_id: u32,
        seq_no: u64,
    ) -> Result<SealedBlob, EnclaveError> {
        if !self.egress_nonces.insert((stream_id, seq_no)) {
            return Err(EnclaveError::NonceReuse { stream_id, seq_no });
        }
        Ok(self.egress.seal(stream_id, seq_no, plaintext))
    }

    /// Opens a blob against the session's ingress key and the expected
    /// frame identity.
    pub fn decrypt(
        &self,
        blob: &SealedBlob,
        stream_id: u32,
        seq_no: u64,
    ) -> Result<Vec<u8>, EnclaveError> {
        self.ingress.open(blob, stream_id, seq_no)
    }

    /// Runs one registered transform over one sealed chunk: the full
    /// copy-in / decrypt / execute / re-encrypt / copy-out round trip.
    pub fn process(
        &mut self,
        transform_name: &str,
        input: &SealedBlob,
        state: OpaqueState,
        stream_id: u32,
        seq_no: u64,
    ) -> Result<(SealedBlob, OpaqueState), EnclaveError> {
        let def = self
            .transforms
            .get(transform_name)
            .cloned()
            .ok_or_else(|| EnclaveError::UnknownTransform(transform_name.to_string()))?;

        let state_len = state.as_ref().map_or(0, Vec::len);
        let charge = input.len() + def.memory_hint + state_len;
        let available = self.memory_budget - self.used_memory;
        if charge > available {
            return Err(EnclaveError::MemoryBudgetExceeded {
                requested: charge,
                available,
            });
        }
        self.used_memory += charge;

        // Memory is released on every exit path, success or error.
        let result = self.process_locked(&def, input, state, stream_id, seq_no);
        self.used_memory -= charge;
        result
    }

    fn process_locked(
        &mut self,
        def: &TransformDef,
        input: &SealedBlob,
        state: OpaqueState,
        stream_id: u32,
        seq_no: u64,
    ) -> Result<(SealedBlob, OpaqueState), EnclaveError> {
        let plaintext = self.decrypt(input, stream_id, seq_no)?;
        let chunk = Chunk::from_bytes(&plaintext).ok_or(EnclaveError::MalformedChunk)?;

        let func = Arc::clone(&def.func);
        let name = def.name.clone();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(move || {
            func(state, chunk)
        }));
        // Neither panic payloads nor transform error strings may leak the
        // decrypted input; only the transform name crosses back out.
        let (state, output_chunk) = match outcome {
            Ok(Ok(pair)) => pair,
            Ok(Err(_)) | Err(_) => return Err(EnclaveError::TransformPanic(name)),
        };

        let output_bytes = output_chunk.to_bytes();
        let output = self.encrypt(&output_bytes, stream_id, seq_no)?;

        let crossing = self.cost.ecall_time(input.len(), output.len());
        self.metrics.calls += 1;
        self.metrics.bytes_in += input.len() as u64;
        self.metrics.bytes_out += output.len() as u64;
        self.metrics.simulated_crossing_time += crossing;
        if self.realistic_delay {
            // Busy-wait: a call-gate copy burns CPU, so the cost must not
            // be hideable behind other stages' work like a sleep would be.
            let deadline = std::time::Instant::now() + crossing;
            while std::time::Instant::now() < deadline {
                std::hint::spin_loop();
            }
        }

        Ok((output, state))
    }

    /// End-of-stream flush for a reducer: runs the transform on the
    /// `Flush` marker inside the boundary and seals the emitted state
    /// under the given fresh frame identity.
    pub fn flush(
        &mut self,
        transform_name: &str,
        state: OpaqueState,
        stream_id: u32,
        seq_no: u64,
    ) -> Result<(SealedBlob, OpaqueState), EnclaveError> {
        let marker = self.ingress_seal_for_flush(stream_id, seq_no);
        self.process(transform_name, &marker, state, stream_id, seq_no)
    }

    // The flush marker originates inside the boundary; sealing it with the
    // ingress key just reuses the normal process path.
    fn ingress_seal_for_flush(&self, stream_id: u32, seq_no: u64) -> SealedBlob {
        self.ingress.seal(stream_id, seq_no, &Chunk::Flush.to_bytes())
    }
}

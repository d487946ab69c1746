//! Static transform registry.
//!
//! Code cannot be linked into a trusted boundary after it has been
//! measured, so every transform must be registered before the first
//! session is created from a registry. Creation freezes the registry;
//! late registration fails with `RegistrationAfterCreate`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use crate::dataflow::Chunk;

use super::EnclaveError;

/// What role a transform plays in a pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Map,
    Filter,
    Reduce,
    Parse,
}

/// Opaque serialized reducer state, carried across calls.
pub type OpaqueState = Option<Vec<u8>>;

/// The transform body.
///
/// Pure by contract: the execution context offers no file, network, clock,
/// or environment capability, only the chunk and the accumulator state.
/// Reducers receive `Chunk::Flush` at end of stream and answer with their
/// accumulated groups.
pub type TransformFn =
    Arc<dyn Fn(OpaqueState, Chunk) -> Result<(OpaqueState, Chunk), String> + Send + Sync>;

/// A named, statically registered chunk transformation.
#[derive(Clone)]
pub struct TransformDef {
    pub name: String,
    pub kind: TransformKind,
    /// Declared peak working memory, charged against the budget per call.
    pub memory_hint: usize,
    pub func: TransformFn,
}

impl TransformDef {
    pub fn new(
        name: impl Into<String>,
        kind: TransformKind,
        memory_hint: usize,
        func: impl Fn(OpaqueState, Chunk) -> Result<(OpaqueState, Chunk), String>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        TransformDef {
            name: name.into(),
            kind,
            memory_hint,
            func: Arc::new(func),
        }
    }
}

impl std::fmt::Debug for TransformDef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformDef")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("memory_hint", &self.memory_hint)
            .finish()
    }
}

/// Registry of transforms available to sessions created from it.
///
/// One registry models one statically linked binary image; a process may
/// hold several independent registries (useful for tests), each with its
/// own frozen-after-create rule.
#[derive(Default)]
pub struct TransformRegistry {
    transforms: Mutex<HashMap<String, TransformDef>>,
    frozen: AtomicBool,
}

impl TransformRegistry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Registers a transform. Fails once any session exists.
    pub fn register(&self, def: TransformDef) -> Result<(), EnclaveError> {
        if self.frozen.load(Ordering::SeqCst) {
            return Err(EnclaveError::RegistrationAfterCreate);
        }
        let mut transforms = self.transforms.lock().unwrap();
        if transforms.contains_key(&def.name) {
            return Err(EnclaveError::DuplicateName(def.name));
        }
        transforms.insert(def.name.clone(), def);
        Ok(())
    }

    /// Marks the registry immutable and returns the frozen transform map.
    pub(super) fn freeze(&self) -> HashMap<String, TransformDef> {
        self.frozen.store(true, Ordering::SeqCst);
        self.transforms.lock().unwrap().clone()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.load(Ordering::SeqCst)
    }

    /// Looks up a transform for untrusted (clear / encrypted-only) modes,
    /// which run outside any boundary.
    pub fn get(&self, name: &str) -> Option<TransformDef> {
        self.transforms.lock().unwrap().get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.transforms.lock().unwrap().contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.transforms.lock().unwrap().keys().cloned().collect();
        names.sort();
        names
    }
}

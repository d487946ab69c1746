//! The unit of data a transform consumes and produces.
//!
//! A chunk is what one frame payload carries between stages: raw text
//! lines near the source, typed record batches mid-pipeline, and keyed
//! partial aggregates out of reducers. `Flush` is the marker a worker
//! feeds a reducer at end of stream to make it emit its state.

use serde::{Deserialize, Serialize};

use super::record::Record;

/// Partial aggregate for one key: the count/sum accumulator pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub key: String,
    pub count: i64,
    pub sum: f64,
}

impl GroupStat {
    /// Component-wise merge; the fold is a commutative monoid, so merging
    /// partials from any partition of the input gives the single-stream
    /// result.
    pub fn merge(&mut self, other: &GroupStat) {
        debug_assert_eq!(self.key, other.key);
        self.count += other.count;
        self.sum += other.sum;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Chunk {
    /// Raw text lines, one CSV row each.
    Lines(Vec<String>),
    /// Typed record batch.
    Records(Vec<Record>),
    /// Keyed partial aggregates from a reducer.
    Groups(Vec<GroupStat>),
    /// End-of-stream marker handed to a reducer to flush its state.
    Flush,
}

impl Chunk {
    pub fn is_empty(&self) -> bool {
        match self {
            Chunk::Lines(lines) => lines.is_empty(),
            Chunk::Records(records) => records.is_empty(),
            Chunk::Groups(groups) => groups.is_empty(),
            Chunk::Flush => false,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("chunk serialization cannot fail")
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Chunk> {
        serde_json::from_slice(bytes).ok()
    }
}

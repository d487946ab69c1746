//! Reactive combinator API and the built-in transform library.

mod chunk;
mod observable;
mod record;
mod transforms;

pub use chunk::{Chunk, GroupStat};
pub use observable::Observable;
pub use record::{FieldType, Record, Schema, Value};
pub use transforms::{
    csv_parse_batch, field_project, json_parse, split_csv_line, KeyedFold,
};

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum DataflowError {
    #[error("transform failed on record {index}: {message}")]
    Transform { index: u64, message: String },
    #[error("line has {got} fields, schema expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("source error: {0}")]
    Source(String),
}

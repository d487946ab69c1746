//! Secure stream-processing middleware with an emulated trusted boundary.
//!
//! The crate is organized along the life of a chunk: [`wire`] frames and
//! moves it, [`routing`] brokers it between stages, [`enclave`] seals and
//! processes it inside an emulated trusted boundary, [`dataflow`] gives
//! the processing a typed, reactive shape, and [`pipeline`] deploys whole
//! topologies. [`flights`] ships the delayed-flights reference workload,
//! [`harness`] measures it, and [`metrics`] records throughput for
//! stacked-percentile reports.

pub mod dataflow;
pub mod enclave;
pub mod flights;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod routing;
pub mod wire;

pub use dataflow::{Chunk, GroupStat, Record, Schema, Value};
pub use enclave::{CostModel, EnclaveConfig, EnclaveSession, TransformDef, TransformRegistry};
pub use pipeline::{LaunchOptions, PipelineReport, PipelineSpec, SecurityMode};
pub use wire::{Endpoint, Frame};

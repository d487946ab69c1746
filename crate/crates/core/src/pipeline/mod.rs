//! Pipeline specification, deployment, and supervision.
//!
//! A pipeline is a linear chain of stages: a partitioned source, a router
//! between every processing stage, scalable worker stages, and a sink that
//! merges partial results. The spec submodule validates topology files,
//! the launch submodule turns them into running threads, and components
//! hosts the source/worker/sink bodies.

mod components;
mod launch;
mod spec;

pub use components::{
    run_sink, run_source, run_worker, ComponentReport, SinkConfig, SourceConfig, WorkerConfig,
    FLUSH_STREAM_BASE,
};
pub use launch::{
    launch, run_pipeline, ComponentProgress, Deployment, LaunchOptions, PipelineReport,
    StageReport,
};
pub use spec::{
    parse_spec, validate, PipelineSpec, SecurityMode, SpecError, StageRole, StageSpec,
};

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("failed to launch {component}: {reason}")]
    Launch { component: String, reason: String },
    #[error("pipeline made no progress to completion within {elapsed:?}; unfinished: {}", format_unfinished(snapshot))]
    Timeout {
        elapsed: Duration,
        snapshot: Vec<ComponentProgress>,
    },
    #[error("component {name} failed: {message}")]
    Component { name: String, message: String },
    #[error("no stage named {0:?}")]
    UnknownStage(String),
    #[error("stage {0:?} cannot be scaled")]
    CannotScale(String),
}

fn format_unfinished(snapshot: &[ComponentProgress]) -> String {
    let stuck: Vec<String> = snapshot
        .iter()
        .filter(|p| !p.finished)
        .map(|p| format!("{} ({} frames)", p.name, p.frames))
        .collect();
    if stuck.is_empty() {
        "none".to_string()
    } else {
        stuck.join(", ")
    }
}

//! Declarative topology definition and validation.
//!
//! A pipeline file is TOML describing a linear chain
//! `source -> router -> (worker -> router)* -> sink`. Routers bind both
//! of their endpoints; sources, workers, and sinks connect to them, so a
//! stage can scale without any configuration change. Unknown keys are
//! rejected. Port `0` asks the launcher to pick a free port and rewire
//! the connecting side accordingly (handy for tests and single-machine
//! runs).
//!
//! ```toml
//! mode = "enclave"
//! key_env = "STREAMSHIELD_KEY"
//! chunk_records = 2048
//!
//! [[stage]]
//! name = "data_stream"
//! role = "source"
//! workers = 4            # partitions; stream_id = partition index
//! to = "tcp://127.0.0.1:5555"
//! input = "flights.csv"
//!
//! [[stage]]
//! name = "router_data_mapper"
//! role = "router"
//! from = "tcp://*:5555"
//! to = "tcp://*:5556"
//! ...
//! ```

use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::enclave::{TransformRegistry, KEY_ENV_DEFAULT};
use crate::wire::Endpoint;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("transform {0:?} is not registered")]
    UnknownTransform(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("mode error: {0}")]
    Mode(String),
}

/// The three security configurations of a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecurityMode {
    /// Plaintext end to end; the unsafe baseline.
    Clear,
    /// Chunks are encrypted on the wire but processed outside any
    /// trusted boundary.
    Encrypted,
    /// Chunks are encrypted and every worker transform runs inside an
    /// enclave session.
    Enclave,
}

impl std::fmt::Display for SecurityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SecurityMode::Clear => write!(f, "clear"),
            SecurityMode::Encrypted => write!(f, "encrypted"),
            SecurityMode::Enclave => write!(f, "enclave"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageRole {
    Source,
    Router,
    Worker,
    Sink,
}

/// One stage of the chain.
#[derive(Debug, Clone)]
pub struct StageSpec {
    pub name: String,
    pub role: StageRole,
    pub transform: Option<String>,
    pub workers: usize,
    pub inbound: Option<Endpoint>,
    pub outbound: Option<Endpoint>,
    pub placement: Vec<String>,
    /// Source stages only: the dataset to stream.
    pub input: Option<String>,
    /// Source stages only: skip the first line of the dataset.
    pub has_header: bool,
}

/// A validated topology.
#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub stages: Vec<StageSpec>,
    pub mode: SecurityMode,
    /// Environment variable holding the hex-encoded key.
    pub key_env: String,
    /// Records batched into one frame.
    pub chunk_records: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    mode: SecurityMode,
    key_env: Option<String>,
    chunk_records: Option<usize>,
    #[serde(rename = "stage")]
    stages: Vec<RawStage>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    name: String,
    role: StageRole,
    transform: Option<String>,
    workers: Option<usize>,
    from: Option<Endpoint>,
    to: Option<Endpoint>,
    placement: Option<Vec<String>>,
    input: Option<String>,
    header: Option<bool>,
}

/// Parses and fully validates a pipeline description.
pub fn parse_spec(text: &str, registry: &Arc<TransformRegistry>) -> Result<PipelineSpec, SpecError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| SpecError::Syntax(e.to_string()))?;
    let stages = raw
        .stages
        .into_iter()
        .map(|s| StageSpec {
            name: s.name,
            role: s.role,
            transform: s.transform,
            workers: s.workers.unwrap_or(1),
            inbound: s.from,
            outbound: s.to,
            placement: s.placement.unwrap_or_default(),
            input: s.input,
            has_header: s.header.unwrap_or(true),
        })
        .collect();
    let spec = PipelineSpec {
        stages,
        mode: raw.mode,
        key_env: raw.key_env.unwrap_or_else(|| KEY_ENV_DEFAULT.to_string()),
        chunk_records: raw.chunk_records.unwrap_or(2048),
    };
    validate(&spec, registry)?;
    Ok(spec)
}

/// Structural validation of an in-memory spec.
pub fn validate(spec: &PipelineSpec, registry: &Arc<TransformRegistry>) -> Result<(), SpecError> {
    if spec.chunk_records == 0 {
        return Err(SpecError::Topology("chunk_records must be positive".into()));
    }
    let stages = &spec.stages;
    if stages.len() < 3 {
        return Err(SpecError::Topology(
            "a pipeline needs at least source, router, sink".into(),
        ));
    }

    // Role sequence: source, router, (worker, router)*, sink.
    if stages.first().unwrap().role != StageRole::Source {
        return Err(SpecError::Topology("first stage must be a source".into()));
    }
    if stages.last().unwrap().role != StageRole::Sink {
        return Err(SpecError::Topology("last stage must be a sink".into()));
    }
    for (i, stage) in stages.iter().enumerate().skip(1).take(stages.len() - 2) {
        let expect_router = i % 2 == 1;
        let ok = if expect_router {
            stage.role == StageRole::Router
        } else {
            stage.role == StageRole::Worker
        };
        if !ok {
            return Err(SpecError::Topology(format!(
                "stage {:?} breaks the source/router/worker chain",
                stage.name
            )));
        }
    }
    if stages[stages.len() - 2].role != StageRole::Router {
        return Err(SpecError::Topology(
            "the sink must be fed by a router".into(),
        ));
    }

    for stage in stages {
        if stage.workers == 0 {
            return Err(SpecError::Topology(format!(
                "stage {:?} needs at least one worker",
                stage.name
            )));
        }
        match stage.role {
            StageRole::Source => {
                if stage.inbound.is_some() {
                    return Err(SpecError::Topology(format!(
                        "source {:?} must not declare an inbound endpoint",
                        stage.name
                    )));
                }
                if stage.outbound.is_none() {
                    return Err(SpecError::Topology(format!(
                        "source {:?} needs an outbound endpoint",
                        stage.name
                    )));
                }
            }
            StageRole::Router => {
                if stage.inbound.is_none() || stage.outbound.is_none() {
                    return Err(SpecError::Topology(format!(
                        "router {:?} needs both endpoints",
                        stage.name
                    )));
                }
                // Port 0 means two distinct ephemeral ports.
                if stage.inbound == stage.outbound
                    && stage.inbound.as_ref().is_some_and(|e| e.port != 0)
                {
                    return Err(SpecError::Topology(format!(
                        "router {:?} inbound equals outbound",
                        stage.name
                    )));
                }
                if stage.workers != 1 {
                    return Err(SpecError::Topology(format!(
                        "router {:?} cannot scale",
                        stage.name
                    )));
                }
            }
            StageRole::Worker => {
                if stage.inbound.is_none() || stage.outbound.is_none() {
                    return Err(SpecError::Topology(format!(
                        "worker {:?} needs both endpoints",
                        stage.name
                    )));
                }
                match &stage.transform {
                    None => {
                        return Err(SpecError::Topology(format!(
                            "worker {:?} needs a transform",
                            stage.name
                        )))
                    }
                    Some(name) if !registry.contains(name) => {
                        return Err(SpecError::UnknownTransform(name.clone()))
                    }
                    Some(_) => {}
                }
                if spec.mode == SecurityMode::Enclave
                    && !stage.placement.iter().any(|tag| tag == "sgx")
                {
                    return Err(SpecError::Mode(format!(
                        "enclave mode requires the sgx placement tag on worker {:?}",
                        stage.name
                    )));
                }
            }
            StageRole::Sink => {
                if stage.outbound.is_some() {
                    return Err(SpecError::Topology(format!(
                        "sink {:?} must not declare an outbound endpoint",
                        stage.name
                    )));
                }
                if stage.inbound.is_none() {
                    return Err(SpecError::Topology(format!(
                        "sink {:?} needs an inbound endpoint",
                        stage.name
                    )));
                }
                if let Some(name) = &stage.transform {
                    if !registry.contains(name) {
                        return Err(SpecError::UnknownTransform(name.clone()));
                    }
                }
            }
        }
    }

    // Adjacent connect/bind endpoints must agree on the port (0 = auto).
    let port_pairs = connection_pairs(stages);
    for (a, b, what) in port_pairs {
        if a != 0 && b != 0 && a != b {
            return Err(SpecError::Topology(format!(
                "dangling endpoint: {what} ({a} vs {b})"
            )));
        }
    }

    Ok(())
}

/// (connect port, bind port, description) for each hop in the chain.
fn connection_pairs(stages: &[StageSpec]) -> Vec<(u16, u16, String)> {
    let mut pairs = Vec::new();
    for window in stages.windows(2) {
        let (up, down) = (&window[0], &window[1]);
        match (up.role, down.role) {
            // Producer connects to the next router's inbound bind.
            (StageRole::Source | StageRole::Worker, StageRole::Router) => pairs.push((
                up.outbound.as_ref().map_or(0, |e| e.port),
                down.inbound.as_ref().map_or(0, |e| e.port),
                format!("{} -> {}", up.name, down.name),
            )),
            // Consumer connects to the previous router's outbound bind.
            (StageRole::Router, StageRole::Worker | StageRole::Sink) => pairs.push((
                down.inbound.as_ref().map_or(0, |e| e.port),
                up.outbound.as_ref().map_or(0, |e| e.port),
                format!("{} -> {}", up.name, down.name),
            )),
            _ => {}
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enclave::{TransformDef, TransformKind};

    fn registry() -> Arc<TransformRegistry> {
        let registry = TransformRegistry::new();
        for name in ["csv_parse", "filter_delayed", "reduce_by_carrier"] {
            registry
                .register(TransformDef::new(name, TransformKind::Map, 0, |s, c| {
                    Ok((s, c))
                }))
                .unwrap();
        }
        registry
    }

    const EXAMPLE: &str = r#"
mode = "clear"
chunk_records = 512

[[stage]]
name = "data_stream"
role = "source"
workers = 4
to = "tcp://127.0.0.1:5555"
input = "flights.csv"

[[stage]]
name = "router_data_mapper"
role = "router"
from = "tcp://*:5555"
to = "tcp://*:5556"

[[stage]]
name = "mapper"
role = "worker"
transform = "csv_parse"
from = "tcp://127.0.0.1:5556"
to = "tcp://127.0.0.1:5557"
placement = ["sgx"]

[[stage]]
name = "router_mapper_filter"
role = "router"
from = "tcp://*:5557"
to = "tcp://*:5558"

[[stage]]
name = "filter"
role = "worker"
transform = "filter_delayed"
from = "tcp://127.0.0.1:5558"
to = "tcp://127.0.0.1:5559"
placement = ["sgx"]

[[stage]]
name = "router_filter_reducer"
role = "router"
from = "tcp://*:5559"
to = "tcp://*:5560"

[[stage]]
name = "reducer_sink"
role = "sink"
transform = "reduce_by_carrier"
from = "tcp://127.0.0.1:5560"
"#;

    #[test]
    fn example_spec_parses_to_seven_stages() {
        let spec = parse_spec(EXAMPLE, &registry()).unwrap();
        assert_eq!(spec.stages.len(), 7);
        assert_eq!(spec.stages[0].workers, 4);
        assert_eq!(spec.chunk_records, 512);
    }

    #[test]
    fn sink_with_outbound_is_topology_error() {
        let text = EXAMPLE.replace(
            "role = \"sink\"\ntransform = \"reduce_by_carrier\"\nfrom = \"tcp://127.0.0.1:5560\"",
            "role = \"sink\"\ntransform = \"reduce_by_carrier\"\nfrom = \"tcp://127.0.0.1:5560\"\nto = \"tcp://127.0.0.1:6000\"",
        );
        assert!(matches!(
            parse_spec(&text, &registry()),
            Err(SpecError::Topology(_))
        ));
    }

    #[test]
    fn enclave_mode_without_sgx_tag_is_mode_error() {
        let text = EXAMPLE
            .replace("mode = \"clear\"", "mode = \"enclave\"")
            .replacen("placement = [\"sgx\"]", "", 1);
        assert!(matches!(
            parse_spec(&text, &registry()),
            Err(SpecError::Mode(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = EXAMPLE.replace("chunk_records = 512", "chunk_records = 512\nbogus = 1");
        assert!(matches!(
            parse_spec(&text, &registry()),
            Err(SpecError::Syntax(_))
        ));
    }

    #[test]
    fn unregistered_transform_is_rejected() {
        let text = EXAMPLE.replace("\"filter_delayed\"", "\"no_such_transform\"");
        assert!(matches!(
            parse_spec(&text, &registry()),
            Err(SpecError::UnknownTransform(_))
        ));
    }

    #[test]
    fn mismatched_ports_are_dangling() {
        let text = EXAMPLE.replace("from = \"tcp://127.0.0.1:5558\"", "from = \"tcp://127.0.0.1:5999\"");
        assert!(matches!(
            parse_spec(&text, &registry()),
            Err(SpecError::Topology(_))
        ));
    }
}

//! The delayed-flights workload: dataset tooling, the transform library
//! it registers, an independent oracle, and a ready-made topology.
//!
//! The normalized dataset is a CSV with the fixed header
//! `carrier,year,month,day,dep_delay,arr_delay`. Real on-time performance
//! exports with other layouts are normalized by [`ingest_bts`], which maps
//! columns by header name. A flight counts as delayed when its arrival
//! delay is strictly positive.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataflow::{
    csv_parse_batch, split_csv_line, Chunk, FieldType, GroupStat, KeyedFold, Schema,
};
use crate::enclave::{EnclaveError, TransformDef, TransformKind, TransformRegistry};
use crate::pipeline::{PipelineReport, PipelineSpec, SecurityMode, StageRole, StageSpec};
use crate::wire::Endpoint;

/// Header of the normalized dataset.
pub const FLIGHT_HEADER: &str = "carrier,year,month,day,dep_delay,arr_delay";

/// Field index of the carrier code.
pub const CARRIER_FIELD: usize = 0;
/// Field index of the arrival delay.
pub const ARR_DELAY_FIELD: usize = 5;

/// Two-letter codes of real US carriers, used by the generator.
pub const CARRIER_CODES: [&str; 20] = [
    "AA", "AS", "B6", "CO", "DL", "EV", "F9", "FL", "HA", "MQ", "NW", "OH", "OO", "UA", "US",
    "WN", "XE", "YV", "9E", "DH",
];

#[derive(Debug, Error)]
pub enum FlightsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized input layout: no column for {0:?}")]
    UnknownLayout(&'static str),
}

/// Schema of the normalized dataset.
pub fn flight_schema() -> Schema {
    Schema::new(vec![
        ("carrier", FieldType::Str),
        ("year", FieldType::Int),
        ("month", FieldType::Int),
        ("day", FieldType::Int),
        ("dep_delay", FieldType::Float),
        ("arr_delay", FieldType::Float),
    ])
}

/// Writes a synthetic normalized dataset. Deterministic per seed; about
/// 40% of rows are delayed, spread over `carriers` carrier codes.
pub fn generate_dataset(
    path: &Path,
    rows: u64,
    carriers: usize,
    seed: u64,
) -> Result<(), FlightsError> {
    let carriers = carriers.clamp(1, CARRIER_CODES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{FLIGHT_HEADER}")?;
    for _ in 0..rows {
        let carrier = CARRIER_CODES[rng.gen_range(0..carriers)];
        let year = 2008;
        let month = rng.gen_range(1..=12);
        let day = rng.gen_range(1..=28);
        let arr_delay: i64 = if rng.gen_bool(0.4) {
            rng.gen_range(1..=180)
        } else {
            rng.gen_range(-30..=0)
        };
        let dep_delay = (arr_delay + rng.gen_range(-10..=10)).max(-30);
        writeln!(out, "{carrier},{year},{month},{day},{dep_delay},{arr_delay}")?;
    }
    out.flush()?;
    Ok(())
}

/// Outcome of normalizing a raw export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    /// Data rows written.
    pub rows: u64,
    /// Rows dropped for a missing or non-numeric arrival delay.
    pub dropped: u64,
}

const COLUMN_ALIASES: [(&str, &[&str]); 6] = [
    ("carrier", &["carrier", "uniquecarrier", "op_unique_carrier", "op_carrier"]),
    ("year", &["year"]),
    ("month", &["month"]),
    ("day", &["dayofmonth", "day_of_month", "day"]),
    ("dep_delay", &["depdelay", "dep_delay"]),
    ("arr_delay", &["arrdelay", "arr_delay"]),
];

/// Normalizes a raw on-time performance export into the fixed layout.
///
/// Columns are located by header name (several alias spellings per
/// column); rows whose arrival delay is missing or non-numeric are
/// dropped and counted, matching the streaming parser's tolerance.
pub fn ingest_bts(input: &Path, output: &Path) -> Result<IngestSummary, FlightsError> {
    let mut lines = BufReader::new(File::open(input)?).lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or(FlightsError::UnknownLayout("carrier"))?;
    let columns: Vec<String> = split_csv_line(&header)
        .iter()
        .map(|c| c.trim().to_ascii_lowercase().replace('_', ""))
        .collect();
    let mut indices = [0usize; 6];
    for (slot, (name, aliases)) in COLUMN_ALIASES.iter().enumerate() {
        indices[slot] = columns
            .iter()
            .position(|c| aliases.iter().any(|a| a.replace('_', "") == *c))
            .ok_or(FlightsError::UnknownLayout(name))?;
    }

    let mut out = BufWriter::new(File::create(output)?);
    writeln!(out, "{FLIGHT_HEADER}")?;
    let mut summary = IngestSummary { rows: 0, dropped: 0 };
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(&line);
        let pick = |slot: usize| fields.get(indices[slot]).map(|f| f.trim()).unwrap_or("");
        let arr_delay = pick(5);
        if arr_delay.parse::<f64>().is_err() || pick(4).parse::<f64>().is_err() {
            summary.dropped += 1;
            continue;
        }
        writeln!(
            out,
            "{},{},{},{},{},{}",
            pick(0),
            pick(1),
            pick(2),
            pick(3),
            pick(4),
            arr_delay
        )?;
        summary.rows += 1;
    }
    out.flush()?;
    Ok(summary)
}

/// Per-carrier delay aggregate, the workload's final answer.
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierStats {
    pub carrier: String,
    pub delayed_count: i64,
    pub delay_sum: f64,
}

impl CarrierStats {
    /// Mean arrival delay over the delayed flights.
    pub fn mean_delay(&self) -> f64 {
        if self.delayed_count == 0 {
            0.0
        } else {
            self.delay_sum / self.delayed_count as f64
        }
    }
}

/// Converts the sink's group output into carrier stats.
pub fn groups_to_carrier_stats(groups: &[GroupStat]) -> Vec<CarrierStats> {
    groups
        .iter()
        .map(|g| CarrierStats {
            carrier: g.key.clone(),
            delayed_count: g.count,
            delay_sum: g.sum,
        })
        .collect()
}

/// Reference answer computed by a deliberately naive single pass, sharing
/// no code with the streaming parser or reducer.
pub fn oracle_delayed_by_carrier(path: &Path) -> Result<Vec<CarrierStats>, FlightsError> {
    use std::collections::BTreeMap;
    let mut totals: BTreeMap<String, (i64, f64)> = BTreeMap::new();
    for (line_no, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            continue;
        }
        let delay: f64 = match fields[5].trim().parse() {
            Ok(d) => d,
            Err(_) => continue,
        };
        if delay > 0.0 {
            let entry = totals.entry(fields[0].trim().to_string()).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += delay;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(carrier, (count, sum))| CarrierStats {
            carrier,
            delayed_count: count,
            delay_sum: sum,
        })
        .collect())
}

fn state_to_u64(state: &Option<Vec<u8>>) -> u64 {
    state
        .as_deref()
        .and_then(|b| serde_json::from_slice(b).ok())
        .unwrap_or(0)
}

fn fold_from_state(state: &Option<Vec<u8>>) -> KeyedFold {
    let mut fold = KeyedFold::new();
    if let Some(bytes) = state.as_deref() {
        if let Ok(groups) = serde_json::from_slice::<Vec<GroupStat>>(bytes) {
            fold.merge_groups(&groups);
        }
    }
    fold
}

fn fold_to_state(fold: KeyedFold) -> Option<Vec<u8>> {
    Some(serde_json::to_vec(&fold.into_groups()).expect("groups serialize"))
}

/// Registers the workload's transforms. Must run before the first enclave
/// session is created from the registry.
pub fn register_flight_transforms(registry: &Arc<TransformRegistry>) -> Result<(), EnclaveError> {
    let schema = flight_schema();
    registry.register(TransformDef::new(
        "csv_parse",
        TransformKind::Parse,
        1 << 20,
        move |state, chunk| match chunk {
            Chunk::Lines(lines) => {
                let (records, malformed) = csv_parse_batch(&lines, &schema, false)
                    .map_err(|e| e.to_string())?;
                let total = state_to_u64(&state) + malformed;
                Ok((
                    Some(serde_json::to_vec(&total).expect("u64 serializes")),
                    Chunk::Records(records),
                ))
            }
            Chunk::Flush => Ok((state, Chunk::Records(Vec::new()))),
            other => Ok((state, other)),
        },
    ))?;

    registry.register(TransformDef::new(
        "filter_delayed",
        TransformKind::Filter,
        1 << 20,
        |state, chunk| match chunk {
            Chunk::Records(mut records) => {
                records.retain(|r| {
                    r.get(ARR_DELAY_FIELD)
                        .and_then(|v| v.as_float())
                        .map(|d| d > 0.0)
                        .unwrap_or(false)
                });
                Ok((state, Chunk::Records(records)))
            }
            other => Ok((state, other)),
        },
    ))?;

    registry.register(TransformDef::new(
        "reduce_by_carrier",
        TransformKind::Reduce,
        1 << 20,
        |state, chunk| match chunk {
            Chunk::Records(records) => {
                let mut fold = fold_from_state(&state);
                for record in &records {
                    fold.fold(record, CARRIER_FIELD, ARR_DELAY_FIELD);
                }
                Ok((fold_to_state(fold), Chunk::Records(Vec::new())))
            }
            Chunk::Groups(groups) => {
                let mut fold = fold_from_state(&state);
                fold.merge_groups(&groups);
                Ok((fold_to_state(fold), Chunk::Records(Vec::new())))
            }
            Chunk::Flush => Ok((None, Chunk::Groups(fold_from_state(&state).into_groups()))),
            other => Ok((state, other)),
        },
    ))?;

    registry.register(TransformDef::new(
        "identity",
        TransformKind::Map,
        0,
        |state, chunk| Ok((state, chunk)),
    ))?;
    Ok(())
}

/// Builds the seven-stage delayed-flights topology on ephemeral loopback
/// ports: partitioned source, parse workers, filter workers, and a
/// reducing sink, with a router between each pair.
pub fn delayed_flights_spec(
    mode: SecurityMode,
    source_partitions: usize,
    workers_per_stage: usize,
    chunk_records: usize,
) -> PipelineSpec {
    let ep = || Some(Endpoint::loopback(0));
    let bind = || Some(Endpoint::new("*", 0));
    let stage = |name: &str, role: StageRole| StageSpec {
        name: name.to_string(),
        role,
        transform: None,
        workers: 1,
        inbound: None,
        outbound: None,
        placement: Vec::new(),
        input: None,
        has_header: true,
    };

    let mut stages = Vec::new();
    let mut source = stage("data_stream", StageRole::Source);
    source.workers = source_partitions.max(1);
    source.outbound = ep();
    stages.push(source);

    let mut r1 = stage("router_data_mapper", StageRole::Router);
    (r1.inbound, r1.outbound) = (bind(), bind());
    stages.push(r1);

    let mut mapper = stage("mapper", StageRole::Worker);
    mapper.transform = Some("csv_parse".to_string());
    mapper.workers = workers_per_stage.max(1);
    (mapper.inbound, mapper.outbound) = (ep(), ep());
    mapper.placement = vec!["sgx".to_string()];
    stages.push(mapper);

    let mut r2 = stage("router_mapper_filter", StageRole::Router);
    (r2.inbound, r2.outbound) = (bind(), bind());
    stages.push(r2);

    let mut filter = stage("filter", StageRole::Worker);
    filter.transform = Some("filter_delayed".to_string());
    filter.workers = workers_per_stage.max(1);
    (filter.inbound, filter.outbound) = (ep(), ep());
    filter.placement = vec!["sgx".to_string()];
    stages.push(filter);

    let mut r3 = stage("router_filter_reducer", StageRole::Router);
    (r3.inbound, r3.outbound) = (bind(), bind());
    stages.push(r3);

    let mut sink = stage("reducer_sink", StageRole::Sink);
    sink.transform = Some("reduce_by_carrier".to_string());
    sink.inbound = ep();
    stages.push(sink);

    PipelineSpec {
        stages,
        mode,
        key_env: crate::enclave::KEY_ENV_DEFAULT.to_string(),
        chunk_records,
    }
}

/// Extracts carrier stats from a finished run.
pub fn pipeline_carrier_stats(report: &PipelineReport) -> Vec<CarrierStats> {
    groups_to_carrier_stats(&report.groups)
}

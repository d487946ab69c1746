//! Built-in transform library: the csv/json parsers compiled into the
//! trusted boundary, field projection, and the keyed count/sum reducer.
//!
//! Malformed CSV lines are counted and dropped by default; a multi-million
//! row dataset always has dirty rows and one of them must not abort the
//! pipeline. Strict mode turns an arity mismatch into `SchemaMismatch`.

use std::collections::BTreeMap;

use super::chunk::GroupStat;
use super::record::{FieldType, Record, Schema, Value};
use super::DataflowError;

/// Splits one RFC-4180-style line into fields. Double quotes wrap fields
/// that contain commas or quotes; `""` inside a quoted field is a literal
/// quote. Embedded newlines are out of scope for the desk-scale profile.
pub fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut chars = line.chars().peekable();
    let mut in_quotes = false;
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        in_quotes = false;
                    }
                }
                other => field.push(other),
            }
        } else {
            match c {
                '"' => in_quotes = true,
                ',' => fields.push(std::mem::take(&mut field)),
                other => field.push(other),
            }
        }
    }
    fields.push(field);
    fields
}

fn parse_field(text: &str, ty: FieldType) -> Option<Value> {
    let trimmed = text.trim();
    match ty {
        FieldType::Str => Some(Value::Str(trimmed.to_string())),
        FieldType::Int => trimmed.parse::<i64>().ok().map(Value::Int),
        FieldType::Float => trimmed.parse::<f64>().ok().map(Value::Float),
    }
}

/// Parses a batch of CSV lines against a schema.
///
/// Returns the parsed records plus the number of lines dropped as
/// malformed. In strict mode an arity mismatch is fatal instead.
pub fn csv_parse_batch(
    lines: &[String],
    schema: &Schema,
    strict: bool,
) -> Result<(Vec<Record>, u64), DataflowError> {
    let mut records = Vec::with_capacity(lines.len());
    let mut malformed = 0u64;
    for line in lines {
        if line.is_empty() {
            malformed += 1;
            continue;
        }
        let fields = split_csv_line(line);
        if fields.len() != schema.arity() {
            if strict {
                return Err(DataflowError::SchemaMismatch {
                    expected: schema.arity(),
                    got: fields.len(),
                });
            }
            malformed += 1;
            continue;
        }
        let mut record = Vec::with_capacity(fields.len());
        let mut ok = true;
        for (text, (_, ty)) in fields.iter().zip(&schema.fields) {
            match parse_field(text, *ty) {
                Some(value) => record.push(value),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            records.push(record);
        } else {
            malformed += 1;
        }
    }
    Ok((records, malformed))
}

/// Parses a JSON array into a record batch.
///
/// Array elements may be arrays (positional fields) or objects (fields in
/// lexicographic key order, for determinism).
pub fn json_parse(text: &str) -> Result<Vec<Record>, DataflowError> {
    let parsed: serde_json::Value =
        serde_json::from_str(text).map_err(|e| DataflowError::Parse(e.to_string()))?;
    let items = match parsed {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    items.into_iter().map(json_record).collect()
}

fn json_record(item: serde_json::Value) -> Result<Record, DataflowError> {
    let scalars: Vec<serde_json::Value> = match item {
        serde_json::Value::Array(values) => values,
        serde_json::Value::Object(map) => {
            let sorted: BTreeMap<_, _> = map.into_iter().collect();
            sorted.into_values().collect()
        }
        scalar => vec![scalar],
    };
    scalars
        .into_iter()
        .map(|v| match v {
            serde_json::Value::String(s) => Ok(Value::Str(s)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Value::Int(i))
                } else {
                    Ok(Value::Float(n.as_f64().unwrap_or(f64::NAN)))
                }
            }
            serde_json::Value::Bool(b) => Ok(Value::Int(b as i64)),
            serde_json::Value::Null => Ok(Value::Null),
            nested => Err(DataflowError::Parse(format!(
                "nested value in record position: {nested}"
            ))),
        })
        .collect()
}

/// Keeps only the given field positions, in the given order.
pub fn field_project(records: &[Record], indices: &[usize]) -> Vec<Record> {
    records
        .iter()
        .map(|record| {
            indices
                .iter()
                .map(|&i| record.get(i).cloned().unwrap_or(Value::Null))
                .collect()
        })
        .collect()
}

/// Keyed count/sum fold with a monoidal merge, the accumulator shape of
/// the reducer stage.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KeyedFold {
    pub groups: BTreeMap<String, GroupStat>,
}

impl KeyedFold {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one record: `count += 1`, `sum += record[value_field]`.
    pub fn fold(&mut self, record: &Record, key_field: usize, value_field: usize) {
        let key = record
            .get(key_field)
            .map(|v| v.to_string())
            .unwrap_or_default();
        let value = record
            .get(value_field)
            .and_then(Value::as_float)
            .unwrap_or(0.0);
        let entry = self.groups.entry(key.clone()).or_insert_with(|| GroupStat {
            key,
            count: 0,
            sum: 0.0,
        });
        entry.count += 1;
        entry.sum += value;
    }

    pub fn merge_groups(&mut self, groups: &[GroupStat]) {
        for group in groups {
            match self.groups.get_mut(&group.key) {
                Some(existing) => existing.merge(group),
                None => {
                    self.groups.insert(group.key.clone(), group.clone());
                }
            }
        }
    }

    pub fn into_groups(self) -> Vec<GroupStat> {
        self.groups.into_values().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flight_like_schema() -> Schema {
        Schema::new(vec![
            ("carrier", FieldType::Str),
            ("date", FieldType::Str),
            ("arr_delay", FieldType::Int),
        ])
    }

    #[test]
    fn plain_line_parses_to_typed_record() {
        let (records, malformed) = csv_parse_batch(
            &["AA,2008-01-03,12".to_string()],
            &flight_like_schema(),
            false,
        )
        .unwrap();
        assert_eq!(malformed, 0);
        assert_eq!(
            records,
            vec![vec![
                Value::Str("AA".into()),
                Value::Str("2008-01-03".into()),
                Value::Int(12)
            ]]
        );
    }

    #[test]
    fn empty_line_is_dropped_and_counted() {
        let (records, malformed) =
            csv_parse_batch(&[String::new()], &flight_like_schema(), false).unwrap();
        assert!(records.is_empty());
        assert_eq!(malformed, 1);
    }

    #[test]
    fn quoted_field_keeps_embedded_comma() {
        assert_eq!(split_csv_line("\"a,b\",1"), vec!["a,b", "1"]);
        assert_eq!(split_csv_line("\"he said \"\"hi\"\"\",2"), vec![
            "he said \"hi\"",
            "2"
        ]);
    }

    #[test]
    fn strict_mode_rejects_arity_mismatch() {
        let err = csv_parse_batch(&["AA,1".to_string()], &flight_like_schema(), true).unwrap_err();
        assert!(matches!(
            err,
            DataflowError::SchemaMismatch {
                expected: 3,
                got: 2
            }
        ));
    }

    #[test]
    fn json_arrays_and_objects_both_parse() {
        let records = json_parse(r#"[["AA", 12], {"carrier": "UA", "arr_delay": 5}]"#).unwrap();
        assert_eq!(records[0], vec![Value::Str("AA".into()), Value::Int(12)]);
        // Object keys in lexicographic order: arr_delay, carrier.
        assert_eq!(records[1], vec![Value::Int(5), Value::Str("UA".into())]);
    }

    #[test]
    fn keyed_fold_matches_partitioned_merge() {
        let records: Vec<Record> = vec![
            vec![Value::Str("AA".into()), Value::Int(12)],
            vec![Value::Str("UA".into()), Value::Int(5)],
            vec![Value::Str("AA".into()), Value::Int(3)],
        ];
        let mut whole = KeyedFold::new();
        for r in &records {
            whole.fold(r, 0, 1);
        }

        let mut part_a = KeyedFold::new();
        part_a.fold(&records[0], 0, 1);
        let mut part_b = KeyedFold::new();
        part_b.fold(&records[1], 0, 1);
        part_b.fold(&records[2], 0, 1);
        let mut merged = KeyedFold::new();
        merged.merge_groups(&part_a.into_groups());
        merged.merge_groups(&part_b.into_groups());

        assert_eq!(whole, merged);
    }
}

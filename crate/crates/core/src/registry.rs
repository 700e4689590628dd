//! Service registries and benchmark query sets.
//!
//! Both load from JSONL (one object per line) or a JSON array. Field names are
//! configurable through [`FieldMap`] / [`QueryFieldMap`] so that upstream dumps
//! with different key names can be read without a conversion step.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate service id \"{0}\"")]
    DuplicateId(String),
    #[error("record {record}: missing field \"{field}\"")]
    MissingField { record: String, field: String },
    #[error("record {record}: field \"{field}\" is empty")]
    EmptyField { record: String, field: String },
    #[error("query {query}: ground-truth id \"{id}\" is not in the registry")]
    DanglingGroundTruth { query: String, id: String },
    #[error("query {0}: ground truth is empty")]
    EmptyGroundTruth(String),
    #[error("duplicate query id \"{0}\"")]
    DuplicateQuery(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    #[default]
    Jsonl,
    JsonArray,
}

impl FileFormat {
    /// Guesses the format from the file extension: `.json` is an array, anything else JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => FileFormat::JsonArray,
            _ => FileFormat::Jsonl,
        }
    }
}

impl std::str::FromStr for FileFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(FileFormat::Jsonl),
            "json" | "json-array" => Ok(FileFormat::JsonArray),
            other => Err(format!("unknown file format \"{other}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Service {
    pub id: String,
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Service {
    pub fn new(id: impl Into<String>, name: impl Into<String>, description: impl Into<String>) -> Self {
        Service {
            id: id.into(),
            name: name.into(),
            description: description.into(),
            source: None,
        }
    }
}

/// Key names used when reading service records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMap {
    pub id: String,
    pub name: String,
    pub description: String,
    pub source: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            id: "id".into(),
            name: "name".into(),
            description: "description".into(),
            source: "source".into(),
        }
    }
}

/// Key names used when reading query records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFieldMap {
    pub id: String,
    pub text: String,
    pub ground_truth: String,
}

impl Default for QueryFieldMap {
    fn default() -> Self {
        QueryFieldMap {
            id: "id".into(),
            text: "text".into(),
            ground_truth: "ground_truth".into(),
        }
    }
}

/// An ordered, id-indexed set of services. Iteration order is load order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    services: Vec<Service>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn new(services: Vec<Service>) -> Result<Self, RegistryError> {
        let mut index = HashMap::with_capacity(services.len());
        for (pos, s) in services.iter().enumerate() {
            for (field, value) in [("id", &s.id), ("name", &s.name), ("description", &s.description)] {
                if value.trim().is_empty() {
                    return Err(RegistryError::EmptyField {
                        record: if s.id.is_empty() { format!("#{}", pos + 1) } else { s.id.clone() },
                        field: field.into(),
                    });
                }
            }
            if index.insert(s.id.clone(), pos).is_some() {
                return Err(RegistryError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Registry { services, index })
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn services(&self) -> &[Service] {
        &self.services
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Service> {
        self.services.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Service> {
        self.index.get(id).map(|&i| &self.services[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.services.iter().map(|s| s.id.as_str())
    }

    /// Writes the registry as canonical JSONL.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for s in &self.services {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCase {
    pub id: String,
    pub text: String,
    pub ground_truth: BTreeSet<String>,
}

/// Summary of description lengths, measured in characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryStats {
    pub count: usize,
    pub description_min: Option<usize>,
    pub description_median: Option<f64>,
    pub description_mean: Option<f64>,
    pub description_max: Option<usize>,
}

fn read_text(path: &Path) -> Result<String, RegistryError> {
    let bytes = fs::read(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|e| RegistryError::Parse {
        line: 0,
        message: format!("file is not valid UTF-8: {e}"),
    })?;
    Ok(text.strip_prefix('\u{feff}').map(str::to_owned).unwrap_or(text))
}

/// Splits file text into `(line_number, object)` records.
fn parse_records(text: &str, format: FileFormat) -> Result<Vec<(usize, Value)>, RegistryError> {
    match format {
        FileFormat::Jsonl => {
            let mut out = Vec::new();
            for (i, raw) in text.split('\n').enumerate() {
                let line = raw.trim_end_matches('\r').trim();
                if line.is_empty() {
                    continue;
                }
                let value: Value = serde_json::from_str(line).map_err(|e| RegistryError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                out.push((i + 1, value));
            }
            Ok(out)
        }
        FileFormat::JsonArray => {
            let value: Value = serde_json::from_str(text).map_err(|e| RegistryError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            match value {
                Value::Array(items) => Ok(items.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()),
                _ => Err(RegistryError::Parse {
                    line: 1,
                    message: "expected a JSON array of records".into(),
                }),
            }
        }
    }
}

/// Reads a scalar field as an opaque string. Numbers keep their textual form.
fn string_field(record: &Value, key: &str) -> Option<String> {
    match record.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn required(record: &Value, key: &str, label: &str) -> Result<String, RegistryError> {
    let value = string_field(record, key).ok_or_else(|| RegistryError::MissingField {
        record: label.to_owned(),
        field: key.to_owned(),
    })?;
    if value.trim().is_empty() {
        return Err(RegistryError::EmptyField {
            record: label.to_owned(),
            field: key.to_owned(),
        });
    }
    Ok(value)
}

fn record_label(record: &Value, id_key: &str, line: usize) -> String {
    string_field(record, id_key).unwrap_or_else(|| format!("at line {line}"))
}

pub fn parse_registry(text: &str, format: FileFormat, fields: &FieldMap) -> Result<Registry, RegistryError> {
    let mut services = Vec::new();
    for (line, record) in parse_records(text, format)? {
        if !record.is_object() {
            return Err(RegistryError::Parse {
                line,
                message: "record is not a JSON object".into(),
            });
        }
        let label = record_label(&record, &fields.id, line);
        services.push(Service {
            id: required(&record, &fields.id, &label)?,
            name: required(&record, &fields.name, &label)?,
            description: required(&record, &fields.description, &label)?,
            source: string_field(&record, &fields.source),
        });
    }
    Registry::new(services)
}

pub fn load_registry(path: impl AsRef<Path>, format: FileFormat) -> Result<Registry, RegistryError> {
    load_registry_with(path, format, &FieldMap::default())
}

pub fn load_registry_with(
    path: impl AsRef<Path>,
    format: FileFormat,
    fields: &FieldMap,
) -> Result<Registry, RegistryError> {
    let registry = parse_registry(&read_text(path.as_ref())?, format, fields)?;
    log::info!("loaded {} services from {}", registry.len(), path.as_ref().display());
    Ok(registry)
}

pub fn parse_queries(
    text: &str,
    format: FileFormat,
    fields: &QueryFieldMap,
    registry: &Registry,
) -> Result<Vec<QueryCase>, RegistryError> {
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line, record) in parse_records(text, format)? {
        let label = record_label(&record, &fields.id, line);
        let id = required(&record, &fields.id, &label)?;
        let text = required(&record, &fields.text, &label)?;
        let truth_value = record.get(&fields.ground_truth).ok_or_else(|| RegistryError::MissingField {
            record: label.clone(),
            field: fields.ground_truth.clone(),
        })?;
        let ids: Vec<String> = match truth_value {
            Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(RegistryError::Parse {
                        line,
                        message: format!("query {id}: ground-truth entries must be strings"),
                    }),
                })
                .collect::<Result<_, _>>()?,
            Value::String(s) => vec![s.clone()],
            _ => {
                return Err(RegistryError::Parse {
                    line,
                    message: format!("query {id}: ground truth must be an array of ids"),
                })
            }
        };
        if ids.is_empty() {
            return Err(RegistryError::EmptyGroundTruth(id));
        }
        if let Some(missing) = ids.iter().find(|g| !registry.contains(g)) {
            return Err(RegistryError::DanglingGroundTruth {
                query: id,
                id: missing.clone(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(RegistryError::DuplicateQuery(id));
        }
        out.push(QueryCase {
            id,
            text,
            ground_truth: ids.into_iter().collect(),
        });
    }
    Ok(out)
}

pub fn load_queries(path: impl AsRef<Path>, registry: &Registry) -> Result<Vec<QueryCase>, RegistryError> {
    let path = path.as_ref();
    load_queries_with(path, FileFormat::from_path(path), &QueryFieldMap::default(), registry)
}

pub fn load_queries_with(
    path: impl AsRef<Path>,
    format: FileFormat,
    fields: &QueryFieldMap,
    registry: &Registry,
) -> Result<Vec<QueryCase>, RegistryError> {
    parse_queries(&read_text(path.as_ref())?, format, fields, registry)
}

/// Mean ground-truth set size, or `None` for an empty query list.
pub fn mean_ground_truth(queries: &[QueryCase]) -> Option<f64> {
    if queries.is_empty() {
        return None;
    }
    let total: usize = queries.iter().map(|q| q.ground_truth.len()).sum();
    Some(total as f64 / queries.len() as f64)
}

pub fn registry_stats(registry: &Registry) -> RegistryStats {
    let mut lengths: Vec<usize> = registry.iter().map(|s| s.description.chars().count()).collect();
    if lengths.is_empty() {
        return RegistryStats {
            count: 0,
            description_min: None,
            description_median: None,
            description_mean: None,
            description_max: None,
        };
    }
    lengths.sort_unstable();
    let n = lengths.len();
    let median = if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
    };
    RegistryStats {
        count: n,
        description_min: lengths.first().copied(),
        description_median: Some(median),
        description_mean: Some(lengths.iter().sum::<usize>() as f64 / n as f64),
        description_max: lengths.last().copied(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jsonl(ids: &[&str]) -> String {
        ids.iter()
            .map(|id| format!(r#"{{"id":"{id}","name":"n-{id}","description":"does {id}"}}"#))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn preserves_load_order() {
        let r = parse_registry(&jsonl(&["a", "b", "c"]), FileFormat::Jsonl, &FieldMap::default()).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = parse_registry(&jsonl(&["a", "a"]), FileFormat::Jsonl, &FieldMap::default()).unwrap_err();
        assert!(matches!(&err, RegistryError::DuplicateId(id) if id == "a"), "{err}");
        assert!(err.to_string().contains("\"a\""));
    }

    #[test]
    fn missing_field_names_record_and_field() {
        let text = r#"{"id":"a","name":"x","description":"y"}
{"id":"b","name":"x"}"#;
        let err = parse_registry(text, FileFormat::Jsonl, &FieldMap::default()).unwrap_err();
        match err {
            RegistryError::MissingField { record, field } => {
                assert_eq!(record, "b");
                assert_eq!(field, "description");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\"id\":\"a\",\"name\":\"x\",\"description\":\"y\"}\n\n{not json}\n";
        match parse_registry(text, FileFormat::Jsonl, &FieldMap::default()).unwrap_err() {
            RegistryError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn crlf_and_bom_tolerated() {
        let text = format!("\u{feff}{}\r\n", jsonl(&["a", "b"]).replace('\n', "\r\n"));
        let text = text.strip_prefix('\u{feff}').unwrap();
        let r = parse_registry(text, FileFormat::Jsonl, &FieldMap::default()).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn json_array_and_custom_fields() {
        let text = r#"[{"tool_id": 4327, "title": "Maps", "doc": "route planning"}]"#;
        let fields = FieldMap {
            id: "tool_id".into(),
            name: "title".into(),
            description: "doc".into(),
            source: "src".into(),
        };
        let r = parse_registry(text, FileFormat::JsonArray, &fields).unwrap();
        assert_eq!(r.services()[0].id, "4327");
        assert_eq!(r.get("4327").unwrap().name, "Maps");
    }

    #[test]
    fn queries_resolve_against_registry() {
        let reg = parse_registry(&jsonl(&["a", "b"]), FileFormat::Jsonl, &FieldMap::default()).unwrap();
        let ok = r#"{"id":"q1","text":"find a","ground_truth":["a"]}
{"id":"q2","text":"find a and b","ground_truth":["a","b"]}"#;
        let qs = parse_queries(ok, FileFormat::Jsonl, &QueryFieldMap::default(), &reg).unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(mean_ground_truth(&qs), Some(1.5));

        let bad = r#"{"id":"q1","text":"find x","ground_truth":["x"]}"#;
        match parse_queries(bad, FileFormat::Jsonl, &QueryFieldMap::default(), &reg).unwrap_err() {
            RegistryError::DanglingGroundTruth { query, id } => {
                assert_eq!(query, "q1");
                assert_eq!(id, "x");
            }
            other => panic!("unexpected {other}"),
        }

        let empty = r#"{"id":"q1","text":"find","ground_truth":[]}"#;
        assert!(matches!(
            parse_queries(empty, FileFormat::Jsonl, &QueryFieldMap::default(), &reg),
            Err(RegistryError::EmptyGroundTruth(_))
        ));
    }

    #[test]
    fn stats_on_empty_and_small() {
        let empty = registry_stats(&Registry::default());
        assert_eq!(empty.count, 0);
        assert!(empty.description_median.is_none());

        let reg = Registry::new(vec![
            Service::new("a", "a", "x".repeat(10)),
            Service::new("b", "b", "x".repeat(30)),
            Service::new("c", "c", "x".repeat(20)),
        ])
        .unwrap();
        let s = registry_stats(&reg);
        assert_eq!(s.count, 3);
        assert_eq!(s.description_median, Some(20.0));
        assert_eq!(s.description_mean, Some(20.0));
        assert_eq!((s.description_min, s.description_max), (Some(10), Some(30)));
    }

    fn arb_service() -> impl Strategy<Value = (String, String, Option<String>)> {
        ("[^\\s][^\n]{0,20}", "[^\\s][^\n]{0,60}", proptest::option::of("[a-z]{1,8}"))
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(entries in proptest::collection::vec(arb_service(), 0..20)) {
            let services: Vec<Service> = entries
                .into_iter()
                .enumerate()
                .map(|(i, (name, description, source))| Service { id: format!("svc_{i}"), name, description, source })
                .collect();
            let reg = Registry::new(services).unwrap();
            let mut buf = Vec::new();
            reg.write_jsonl(&mut buf).unwrap();
            let back = parse_registry(std::str::from_utf8(&buf).unwrap(), FileFormat::Jsonl, &FieldMap::default()).unwrap();
            prop_assert_eq!(back, reg);
        }
    }
}

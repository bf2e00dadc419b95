//! Event data: JSON Lines ingestion, columnar tables and the dataset registry.
//!
//! An event file holds one JSON object per line mapping collection names to
//! lists of records, e.g.
//! `{"Electrons": [{"pt": 51000.0, "eta": 0.3, "phi": 1.2}]}`.
//! A collection missing from a line is an empty list for that event.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::jagged::{ElementKind, Scalar, Values};
use crate::schema::{DatasetSchema, SchemaError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("event {event}: {msg}")]
    Event { event: usize, msg: String },
    #[error("registry: {0}")]
    Registry(String),
    #[error("dataset `{0}` is not registered")]
    UnknownDataset(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("table `{collection}`: {msg}")]
    Table { collection: String, msg: String },
}

pub type RawRecord = BTreeMap<String, Scalar>;

/// One event as a plain tree of typed records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawEvent {
    pub collections: BTreeMap<String, Vec<RawRecord>>,
}

impl RawEvent {
    /// Records of `collection`; absent collections are empty.
    pub fn records(&self, collection: &str) -> &[RawRecord] {
        self.collections.get(collection).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        for (name, recs) in &self.collections {
            let list = recs
                .iter()
                .map(|r| {
                    let fields = r
                        .iter()
                        .map(|(k, v)| {
                            let j = match v {
                                Scalar::Float(x) => serde_json::json!(x),
                                Scalar::Int(x) => serde_json::json!(x),
                                Scalar::Bool(x) => serde_json::json!(x),
                            };
                            (k.clone(), j)
                        })
                        .collect();
                    serde_json::Value::Object(fields)
                })
                .collect();
            obj.insert(name.clone(), serde_json::Value::Array(list));
        }
        serde_json::Value::Object(obj)
    }
}

/// Parses JSON Lines text. Leaves named in the schema are typed by it
/// (integers are accepted for float leaves); extra numeric leaves are kept
/// as floats. Blank lines are skipped.
pub fn parse_events(text: &str, schema: &DatasetSchema) -> Result<Vec<RawEvent>, DatasetError> {
    let mut events = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let event = events.len();
        let err = |msg: String| DatasetError::Event { event, msg };
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(line).map_err(|e| err(format!("invalid JSON: {e}")))?;
        let mut out = RawEvent::default();
        for (name, list) in obj {
            let leaves = schema.collection(&name).ok_or_else(|| err(format!("unknown collection `{name}`")))?;
            let list = list.as_array().ok_or_else(|| err(format!("`{name}` is not a list")))?;
            let mut recs = Vec::with_capacity(list.len());
            for item in list {
                let fields = item.as_object().ok_or_else(|| err(format!("`{name}` entry is not an object")))?;
                let mut rec = RawRecord::new();
                for (leaf, kind) in leaves {
                    let v = fields.get(leaf).ok_or_else(|| err(format!("`{name}` record lacks `{leaf}`")))?;
                    rec.insert(
                        leaf.clone(),
                        json_scalar(v, *kind).ok_or_else(|| err(format!("`{name}.{leaf}` is not {kind}")))?,
                    );
                }
                for (leaf, v) in fields {
                    if !leaves.contains_key(leaf) {
                        let x = json_scalar(v, ElementKind::Float)
                            .ok_or_else(|| err(format!("extra leaf `{name}.{leaf}` is not numeric")))?;
                        rec.insert(leaf.clone(), x);
                    }
                }
                recs.push(rec);
            }
            out.collections.insert(name, recs);
        }
        events.push(out);
    }
    Ok(events)
}

fn json_scalar(v: &serde_json::Value, kind: ElementKind) -> Option<Scalar> {
    match kind {
        ElementKind::Float => v.as_f64().map(Scalar::Float),
        ElementKind::Int => v.as_i64().map(Scalar::Int),
        ElementKind::Bool => v.as_bool().map(Scalar::Bool),
    }
}

/// Writes events as JSON Lines.
pub fn events_to_jsonl(events: &[RawEvent]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&e.to_json().to_string());
        s.push('\n');
    }
    s
}

/// Flat leaf columns of one collection, all of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordTable {
    collection: String,
    len: usize,
    columns: BTreeMap<String, Values>,
}

impl RecordTable {
    pub fn new(collection: &str, len: usize, columns: BTreeMap<String, Values>) -> Result<Self, DatasetError> {
        if let Some((leaf, _)) = columns.iter().find(|(_, v)| v.len() != len) {
            return Err(DatasetError::Table {
                collection: collection.to_string(),
                msg: format!("column `{leaf}` does not have {len} entries"),
            });
        }
        Ok(RecordTable { collection: collection.to_string(), len, columns })
    }

    pub fn collection(&self) -> &str {
        &self.collection
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn column(&self, leaf: &str) -> Option<&Values> {
        self.columns.get(leaf)
    }

    pub fn columns(&self) -> &BTreeMap<String, Values> {
        &self.columns
    }

    /// A new table holding rows `indices` of this one.
    pub fn gather(&self, indices: &[usize]) -> RecordTable {
        RecordTable {
            collection: self.collection.clone(),
            len: indices.len(),
            columns: self.columns.iter().map(|(k, v)| (k.clone(), v.gather(indices))).collect(),
        }
    }
}

/// Columnar view of a whole dataset: per collection, per-event offsets into
/// one record table.
#[derive(Debug, Clone, PartialEq)]
pub struct EventData {
    n_events: usize,
    collections: BTreeMap<String, (Vec<usize>, Arc<RecordTable>)>,
}

impl EventData {
    pub fn from_events(schema: &DatasetSchema, events: &[RawEvent]) -> Result<Self, DatasetError> {
        let mut collections = BTreeMap::new();
        for (name, leaves) in schema.collections() {
            let mut offsets = vec![0usize];
            let mut extra: BTreeSet<String> = BTreeSet::new();
            for e in events {
                for r in e.records(name) {
                    for k in r.keys() {
                        if !leaves.contains_key(k) {
                            extra.insert(k.clone());
                        }
                    }
                }
            }
            let mut cols: BTreeMap<String, Vec<Scalar>> = BTreeMap::new();
            for e in events {
                for r in e.records(name) {
                    for (leaf, kind) in
                        leaves.iter().map(|(l, k)| (l, *k)).chain(extra.iter().map(|l| (l, ElementKind::Float)))
                    {
                        let v = r.get(leaf).copied().ok_or_else(|| DatasetError::Table {
                            collection: name.to_string(),
                            msg: format!("a record lacks `{leaf}`"),
                        })?;
                        let v = match (kind, v) {
                            (ElementKind::Float, Scalar::Int(i)) => Scalar::Float(i as f64),
                            (k, v) if v.kind() == k => v,
                            _ => {
                                return Err(DatasetError::Table {
                                    collection: name.to_string(),
                                    msg: format!("`{leaf}` is not {kind}"),
                                })
                            }
                        };
                        cols.entry(leaf.clone()).or_default().push(v);
                    }
                }
                let n = offsets.last().unwrap() + e.records(name).len();
                offsets.push(n);
            }
            let len = *offsets.last().unwrap();
            let mut columns = BTreeMap::new();
            for (leaf, kind) in leaves.iter().map(|(l, k)| (l, *k)).chain(extra.iter().map(|l| (l, ElementKind::Float)))
            {
                let vals = cols.remove(leaf.as_str()).unwrap_or_default();
                columns.insert(leaf.clone(), Values::from_scalars(kind, vals));
            }
            let table = RecordTable::new(name, len, columns)?;
            collections.insert(name.to_string(), (offsets, Arc::new(table)));
        }
        Ok(EventData { n_events: events.len(), collections })
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    /// Per-event offsets and the record table of `collection`.
    pub fn collection(&self, name: &str) -> Option<(&[usize], &Arc<RecordTable>)> {
        self.collections.get(name).map(|(o, t)| (o.as_slice(), t))
    }
}

/// A loaded dataset: schema, raw events and their columnar form.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub schema: DatasetSchema,
    pub events: Arc<Vec<RawEvent>>,
    pub data: Arc<EventData>,
}

impl Dataset {
    pub fn from_events(id: &str, schema: DatasetSchema, events: Vec<RawEvent>) -> Result<Self, DatasetError> {
        let data = EventData::from_events(&schema, &events)?;
        Ok(Dataset { id: id.to_string(), schema, events: Arc::new(events), data: Arc::new(data) })
    }

    pub fn load(id: &str, events_path: &Path, schema: DatasetSchema) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(events_path)
            .map_err(|source| DatasetError::Io { path: events_path.display().to_string(), source })?;
        let events = parse_events(&text, &schema)?;
        Dataset::from_events(id, schema, events)
    }
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    datasets: BTreeMap<String, RegistryEntry>,
}

#[derive(Debug, Clone, Deserialize)]
struct RegistryEntry {
    events: PathBuf,
    schema: Option<PathBuf>,
}

/// Maps dataset ids to event files, read from TOML:
///
/// ```toml
/// [datasets."mc.zee"]
/// events = "zee.jsonl"       # relative to the registry file
/// schema = "xaod.schema"     # optional; the built-in model otherwise
/// ```
#[derive(Debug, Clone)]
pub struct Registry {
    base: PathBuf,
    entries: BTreeMap<String, RegistryEntry>,
}

impl Registry {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Registry::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, DatasetError> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| DatasetError::Registry(e.to_string()))?;
        Ok(Registry { base: base.to_path_buf(), entries: file.datasets })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn open(&self, id: &str) -> Result<Dataset, DatasetError> {
        let entry = self.entries.get(id).ok_or_else(|| DatasetError::UnknownDataset(id.to_string()))?;
        let schema = match &entry.schema {
            Some(p) => DatasetSchema::from_file(&self.base.join(p))?,
            None => DatasetSchema::default_model(),
        };
        Dataset::load(id, &self.base.join(&entry.events), schema)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_EVENTS: &str = r#"{"Electrons":[{"pt":50000.0,"eta":0.5,"phi":1.0},{"pt":20000,"eta":-1.0,"phi":2.0}]}
{"Jets":[{"pt":1.0,"eta":0.0,"phi":0.0,"isGood":true}]}
"#;

    #[test]
    fn ingests_into_columns() {
        let schema = DatasetSchema::default_model();
        let events = parse_events(TWO_EVENTS, &schema).unwrap();
        assert_eq!(events.len(), 2);
        assert!(events[1].records("Electrons").is_empty());
        let data = EventData::from_events(&schema, &events).unwrap();
        let (offs, table) = data.collection("Electrons").unwrap();
        assert_eq!(offs, &[0, 2, 2]);
        assert_eq!(table.column("pt"), Some(&Values::Float(vec![50000.0, 20000.0])));
        let (offs, table) = data.collection("Jets").unwrap();
        assert_eq!(offs, &[0, 0, 1]);
        assert_eq!(table.column("isGood"), Some(&Values::Bool(vec![true])));
    }

    #[test]
    fn jsonl_round_trip() {
        let schema = DatasetSchema::default_model();
        let events = parse_events(TWO_EVENTS, &schema).unwrap();
        let again = parse_events(&events_to_jsonl(&events), &schema).unwrap();
        assert_eq!(events, again);
    }

    #[test]
    fn rejects_bad_events() {
        let schema = DatasetSchema::default_model();
        assert!(parse_events("{\"Muons\":[]}", &schema).is_err());
        assert!(parse_events("{\"Electrons\":[{\"pt\":1.0}]}", &schema).is_err());
        let e = parse_events("{}\n{\"Jets\":[{\"pt\":1,\"eta\":0,\"phi\":0,\"isGood\":3}]}", &schema).unwrap_err();
        assert!(matches!(e, DatasetError::Event { event: 1, .. }), "{e}");
    }

    #[test]
    fn registry_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.jsonl"), TWO_EVENTS).unwrap();
        std::fs::write(dir.path().join("reg.toml"), "[datasets.\"mc.a\"]\nevents = \"a.jsonl\"\n").unwrap();
        let reg = Registry::load(&dir.path().join("reg.toml")).unwrap();
        let ds = reg.open("mc.a").unwrap();
        assert_eq!(ds.data.n_events(), 2);
        assert!(matches!(reg.open("nope"), Err(DatasetError::UnknownDataset(_))));
    }
}

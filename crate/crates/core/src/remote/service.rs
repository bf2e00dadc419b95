//! The in-process query service and the client-side remote backend.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::dataset::{Dataset, RecordTable};
use crate::error::{ErrorCategory, ExecError};
use crate::expr::{CanonicalDag, Graph, NodeId};
use crate::jagged::{JaggedArray, Values};
use crate::local::{row_indices, FunctionTable, LocalExecutor, Value};
use crate::schema::infer;

use super::cache::{cache_key, ResultCache};
use super::translate::{parse_to_dag, translate, TranslateOptions};
use super::wire::{self, Column, ResultSet};
use super::QueryError;

/// Encoded response to one submitted query.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteResult {
    pub key: String,
    pub bytes: Vec<u8>,
    pub cached: bool,
}

/// Evaluates query text next to the data. Successful results are cached by
/// dataset and query text when a cache is configured.
#[derive(Debug)]
pub struct QueryService {
    datasets: RwLock<BTreeMap<String, Dataset>>,
    cache: Option<ResultCache>,
    executor: LocalExecutor,
    evaluations: AtomicU64,
}

impl QueryService {
    pub fn new(functions: FunctionTable) -> Self {
        QueryService {
            datasets: RwLock::new(BTreeMap::new()),
            cache: None,
            executor: LocalExecutor::new(functions),
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResultCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn add_dataset(&self, dataset: Dataset) {
        self.datasets.write().unwrap().insert(dataset.id.clone(), dataset);
    }

    pub fn functions(&self) -> &FunctionTable {
        self.executor.functions()
    }

    /// Number of queries evaluated (cache misses).
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Number of DAG node evaluations performed for queries.
    pub fn node_evaluations(&self) -> u64 {
        self.executor.evaluations()
    }

    /// Wire-level entry point: an encoded request in, an encoded response out.
    pub fn handle(&self, request: &[u8]) -> Vec<u8> {
        match wire::decode_request(request) {
            Ok((ds, q)) => self.submit(&ds, &q).bytes,
            Err(e) => wire::encode_error(ErrorCategory::Query, &e.to_string()),
        }
    }

    pub fn submit(&self, dataset: &str, query: &str) -> RemoteResult {
        let key = cache_key(dataset, query);
        if let Some(bytes) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return RemoteResult { key, bytes, cached: true };
        }
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let bytes = match self.evaluate(dataset, query) {
            Ok(rs) => {
                let bytes = wire::encode_result(&rs);
                if let Some(c) = &self.cache {
                    // A failed cache write only costs a re-evaluation later.
                    let _ = c.put(&key, dataset, query, &bytes);
                }
                bytes
            }
            Err((cat, msg)) => wire::encode_error(cat, &msg),
        };
        RemoteResult { key, bytes, cached: false }
    }

    fn evaluate(&self, dataset: &str, query: &str) -> Result<ResultSet, (ErrorCategory, String)> {
        let fail = |cat: ErrorCategory, e: &dyn std::fmt::Display| (cat, e.to_string());
        let ds = self.datasets.read().unwrap().get(dataset).cloned();
        let ds = ds.ok_or_else(|| (ErrorCategory::Data, format!("dataset `{dataset}` is not available")))?;
        let graph = Graph::new();
        self.functions().declare_all(&graph).map_err(|e| fail(ErrorCategory::Build, &e))?;
        let dag = parse_to_dag(&graph, query).map_err(|e| {
            let cat = if matches!(e, QueryError::Build(_)) { ErrorCategory::Build } else { ErrorCategory::Query };
            fail(cat, &e)
        })?;
        if let Some(other) = dag.datasets().into_iter().find(|d| *d != dataset) {
            return Err((ErrorCategory::Query, format!("query reads dataset `{other}`, submitted for `{dataset}`")));
        }
        let shapes = infer(&dag, &ds.schema, false).map_err(|e| fail(ErrorCategory::Type, &e))?;
        let root = dag.roots()[0];
        let n = ds.data.n_events();
        let mut values = self
            .executor
            .run(&dag, Some(&shapes), Some(ds.data.clone()), n, &Default::default(), &[root])
            .map_err(|e| fail(e.category(), &e))?;
        value_to_result(values.pop().unwrap(), n, root).map_err(|e| fail(e.category(), &e))
    }
}

/// Array results ship as one column `value`; records ship every leaf as
/// `<Collection>.<leaf>`.
pub fn value_to_result(v: Value, n_events: usize, node: NodeId) -> Result<ResultSet, ExecError> {
    let columns = match v {
        Value::Records { table, rows } => {
            let idx = row_indices(&rows);
            table
                .columns()
                .iter()
                .map(|(leaf, col)| {
                    let data = JaggedArray::new(rows.offsets().to_vec(), col.gather(&idx))
                        .map_err(|source| ExecError::Kernel { node, source })?;
                    Ok(Column { name: format!("{}.{leaf}", table.collection()), data })
                })
                .collect::<Result<Vec<_>, ExecError>>()?
        }
        other => vec![Column { name: "value".into(), data: other.into_array(n_events, node)? }],
    };
    Ok(ResultSet { n_events: n_events as u64, columns })
}

/// Inverse of [`value_to_result`].
pub fn result_to_value(rs: ResultSet) -> Result<Value, QueryError> {
    let mut cols = rs.columns;
    if cols.len() == 1 && cols[0].name == "value" {
        return Ok(Value::Array(cols.pop().unwrap().data));
    }
    let first = cols.first().ok_or_else(|| QueryError::Wire("empty result".into()))?;
    let (collection, _) =
        first.name.split_once('.').ok_or_else(|| QueryError::Wire(format!("bad column name `{}`", first.name)))?;
    let collection = collection.to_string();
    let offsets = first.data.offsets().to_vec();
    let len = first.data.values().len();
    let mut columns = BTreeMap::new();
    for c in cols {
        let leaf = match c.name.split_once('.') {
            Some((coll, leaf)) if coll == collection => leaf.to_string(),
            _ => return Err(QueryError::Wire(format!("column `{}` is not in `{collection}`", c.name))),
        };
        if c.data.offsets() != offsets.as_slice() {
            return Err(QueryError::Wire(format!("column `{}` has a different structure", c.name)));
        }
        let (_, values) = c.data.into_parts();
        columns.insert(leaf, values);
    }
    let table = RecordTable::new(&collection, len, columns).map_err(|e| QueryError::Wire(e.to_string()))?;
    let rows = JaggedArray::new(offsets, Values::Int((0..len as i64).collect()))
        .map_err(|e| QueryError::Wire(e.to_string()))?;
    Ok(Value::Records { table: Arc::new(table), rows })
}

/// The remote backend as seen by the planner: translates closed nodes and
/// submits them to a service.
#[derive(Debug, Clone)]
pub struct RemoteExecutor {
    service: Arc<QueryService>,
    dataset: String,
    options: TranslateOptions,
}

impl RemoteExecutor {
    /// Queries are submitted against `dataset`, which also supplies the
    /// event count for queries that read no data.
    pub fn new(service: Arc<QueryService>, dataset: &str, options: TranslateOptions) -> Self {
        RemoteExecutor { service, dataset: dataset.to_string(), options }
    }

    pub fn service(&self) -> &Arc<QueryService> {
        &self.service
    }

    pub fn options(&self) -> TranslateOptions {
        self.options
    }

    /// Query text for each target.
    pub fn queries(&self, dag: &CanonicalDag, targets: &[NodeId]) -> Result<Vec<String>, QueryError> {
        targets.iter().map(|t| translate(dag, *t, self.options)).collect()
    }

    /// Evaluates `targets`, one query each. Returns the values and the event
    /// count reported by the service.
    pub fn run(&self, dag: &CanonicalDag, targets: &[NodeId]) -> Result<(Vec<Value>, usize), ExecError> {
        let dataset = &self.dataset;
        let mut out = Vec::with_capacity(targets.len());
        let mut n_events = 0;
        for t in targets {
            let text = translate(dag, *t, self.options)
                .map_err(|e| ExecError::Remote { category: ErrorCategory::Plan, message: e.to_string() })?;
            let request = wire::encode_request(dataset, &text);
            let response = self.service.handle(&request);
            let rs = match wire::decode_response(&response) {
                Ok(Ok(rs)) => rs,
                Ok(Err((category, message))) => return Err(ExecError::Remote { category, message }),
                Err(e) => return Err(ExecError::Remote { category: ErrorCategory::Query, message: e.to_string() }),
            };
            n_events = rs.n_events as usize;
            let v = result_to_value(rs)
                .map_err(|e| ExecError::Remote { category: ErrorCategory::Query, message: e.to_string() })?;
            out.push(v);
        }
        Ok((out, n_events))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_events;
    use crate::schema::DatasetSchema;

    fn service(cache: Option<ResultCache>) -> QueryService {
        let schema = DatasetSchema::default_model();
        let text = "{\"Electrons\":[{\"pt\":50000.0,\"eta\":0.5,\"phi\":0.0}]}\n{}\n";
        let ds = Dataset::from_events("d", schema.clone(), parse_events(text, &schema).unwrap()).unwrap();
        let mut s = QueryService::new(FunctionTable::builtins());
        if let Some(c) = cache {
            s = s.with_cache(c);
        }
        s.add_dataset(ds);
        s
    }

    #[test]
    fn evaluates_and_caches() {
        let dir = tempfile::tempdir().unwrap();
        let s = service(Some(ResultCache::new(dir.path())));
        let q = "From(\"d\") |> Get(\"Electrons\") |> Select(p0 => p0.pt / 1000.0)";
        let a = s.submit("d", q);
        assert!(!a.cached);
        let b = s.submit("d", q);
        assert!(b.cached);
        assert_eq!(a.bytes, b.bytes);
        assert_eq!(s.evaluations(), 1);
        let rs = wire::decode_response(&a.bytes).unwrap().unwrap();
        assert_eq!(rs.columns[0].data, JaggedArray::from_rows(&[vec![50.0], vec![]]));
    }

    #[test]
    fn records_results_carry_all_leaves() {
        let s = service(None);
        let r = s.submit("d", "From(\"d\") |> Get(\"Electrons\") |> Where(p0 => p0.pt > 1.0)");
        let rs = wire::decode_response(&r.bytes).unwrap().unwrap();
        let names: Vec<&str> = rs.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["Electrons.eta", "Electrons.phi", "Electrons.pt"]);
        let Value::Records { table, rows } = result_to_value(rs).unwrap() else { panic!() };
        assert_eq!(table.collection(), "Electrons");
        assert_eq!(rows.offsets(), &[vec![0, 1, 1]]);
    }

    #[test]
    fn errors_keep_their_category() {
        let s = service(None);
        let cat = |q: &str| match wire::decode_response(&s.submit("d", q).bytes).unwrap() {
            Err((c, _)) => c,
            Ok(_) => panic!("{q} succeeded"),
        };
        assert_eq!(cat("From(\"d\") |> Get(\"Electrons\") |> First()).pt"), ErrorCategory::Query);
        assert_eq!(cat("(From(\"d\") |> Get(\"Electrons\") |> First()).pt"), ErrorCategory::EmptySequence);
        assert_eq!(cat("From(\"d\") |> Get(\"Muons\") |> Count()"), ErrorCategory::Type);
        assert_eq!(cat("Nope(1.0)"), ErrorCategory::Build);
        assert_eq!(wire::decode_response(&s.submit("x", "1").bytes).unwrap().unwrap_err().0, ErrorCategory::Data);
    }
}

//! Columnar interpreter for canonical DAGs.
//!
//! Values live in *frames*. The root frame has one row per event. Evaluating
//! a `Map` opens a child frame with one row per innermost element of the
//! mapped sequence; the child remembers, for each of its rows, the parent
//! row it came from. A node is evaluated once in the frame of the deepest
//! parameter it depends on (the root frame if it is closed) and then
//! broadcast into deeper frames by gathering rows. Closing a map prepends
//! the sequence's offsets to the body result.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::{PI, TAU};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::dataset::{EventData, RecordTable};
use crate::error::ExecError;
use crate::expr::{BuildError, CanonicalDag, FunctionSig, Graph, NodeId, NodeKind};
use crate::jagged::{
    apply_binary, apply_unary, binary_result_kind, elementwise_binary, elementwise_unary, mask_innermost,
    reduce_innermost, ElementKind, JaggedArray, JaggedError, Operand, Scalar, Values,
};
use crate::ops::AggregateOp;
use crate::schema::ShapeMap;

/// ΔR between two directions, with the azimuthal difference wrapped into
/// (-π, π].
pub fn delta_r(eta1: f64, phi1: f64, eta2: f64, phi2: f64) -> f64 {
    let deta = eta1 - eta2;
    let raw = phi1 - phi2;
    let dphi = raw - TAU * ((raw - PI) / TAU).ceil();
    (deta * deta + dphi * dphi).sqrt()
}

pub type NativeFn = fn(&[Scalar]) -> Scalar;

fn delta_r_native(args: &[Scalar]) -> Scalar {
    let x: Vec<f64> = args.iter().map(|a| a.as_f64().unwrap_or(f64::NAN)).collect();
    Scalar::Float(delta_r(x[0], x[1], x[2], x[3]))
}

/// Functions a backend implements natively.
#[derive(Debug, Clone)]
pub struct FunctionTable {
    fns: BTreeMap<String, (FunctionSig, NativeFn)>,
}

impl Default for FunctionTable {
    fn default() -> Self {
        FunctionTable::builtins()
    }
}

impl FunctionTable {
    pub fn empty() -> Self {
        FunctionTable { fns: BTreeMap::new() }
    }

    /// `DeltaR(eta1, phi1, eta2, phi2)`.
    pub fn builtins() -> Self {
        let mut t = FunctionTable::empty();
        t.insert(
            "DeltaR",
            FunctionSig { params: vec![ElementKind::Float; 4], ret: ElementKind::Float },
            delta_r_native,
        );
        t
    }

    pub fn insert(&mut self, name: &str, sig: FunctionSig, f: NativeFn) {
        self.fns.insert(name.to_string(), (sig, f));
    }

    pub fn get(&self, name: &str) -> Option<NativeFn> {
        self.fns.get(name).map(|(_, f)| *f)
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.fns.keys().cloned().collect()
    }

    /// Declares every function of the table on `graph`.
    pub fn declare_all(&self, graph: &Graph) -> Result<(), BuildError> {
        for (name, (sig, _)) in &self.fns {
            graph.declare_function(name, &sig.params, sig.ret)?;
        }
        Ok(())
    }
}

/// A value in some frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Events(Arc<EventData>),
    /// Records addressed by row index into `table`; `rows` holds Int indices.
    Records {
        table: Arc<RecordTable>,
        rows: JaggedArray,
    },
    Array(JaggedArray),
    Scalar(Scalar),
}

impl Value {
    /// Row `j` of the result is row `idx[j]` of `self`.
    fn take(&self, idx: &[usize], node: NodeId) -> Result<Value, ExecError> {
        Ok(match self {
            Value::Scalar(s) => Value::Scalar(*s),
            Value::Array(a) => Value::Array(a.take(idx)),
            Value::Records { table, rows } => Value::Records { table: table.clone(), rows: rows.take(idx) },
            Value::Events(_) => {
                return Err(ExecError::Unsupported { node, msg: "the event table cannot be used per element".into() })
            }
        })
    }

    /// Depth relative to the frame row, `None` for scalars and the event table.
    pub fn depth(&self) -> Option<usize> {
        match self {
            Value::Array(a) => Some(a.depth()),
            Value::Records { rows, .. } => Some(rows.depth()),
            _ => None,
        }
    }

    /// A root value as a column of `n_rows` rows. Scalars are broadcast.
    pub fn into_array(self, n_rows: usize, node: NodeId) -> Result<JaggedArray, ExecError> {
        match self {
            Value::Array(a) => Ok(a),
            Value::Scalar(s) => Ok(JaggedArray::filled(n_rows, s)),
            _ => Err(ExecError::Unsupported { node, msg: "records cannot be materialized as a column".into() }),
        }
    }
}

/// Flat indices stored in a records value.
pub(crate) fn row_indices(rows: &JaggedArray) -> Vec<usize> {
    match rows.values() {
        Values::Int(v) => v.iter().map(|&i| i as usize).collect(),
        _ => Vec::new(),
    }
}

struct Frame {
    level: Option<u32>,
    parent: Option<(Rc<Frame>, Vec<usize>)>,
    binding: Option<Value>,
    rows: usize,
    memo: RefCell<HashMap<NodeId, Value>>,
}

impl Frame {
    fn root(rows: usize) -> Rc<Frame> {
        Rc::new(Frame { level: None, parent: None, binding: None, rows, memo: RefCell::new(HashMap::new()) })
    }
}

/// One evaluation of a set of closed nodes.
pub struct Evaluator<'a> {
    dag: &'a CanonicalDag,
    data: Option<Arc<EventData>>,
    n_rows: usize,
    inputs: &'a HashMap<NodeId, Value>,
    functions: &'a FunctionTable,
    counter: &'a AtomicU64,
    shapes: Option<&'a ShapeMap>,
}

impl<'a> Evaluator<'a> {
    /// `inputs` supplies precomputed values of closed nodes; they are used
    /// instead of evaluating those nodes. Without `data`, `Source` fails.
    pub fn new(
        dag: &'a CanonicalDag,
        data: Option<Arc<EventData>>,
        n_rows: usize,
        inputs: &'a HashMap<NodeId, Value>,
        functions: &'a FunctionTable,
        counter: &'a AtomicU64,
    ) -> Self {
        Evaluator { dag, data, n_rows, inputs, functions, counter, shapes: None }
    }

    /// Cross-checks every computed value against inferred shapes in debug
    /// builds.
    pub fn with_shapes(mut self, shapes: &'a ShapeMap) -> Self {
        self.shapes = Some(shapes);
        self
    }

    /// Values of closed `targets` in the root frame.
    pub fn evaluate(&self, targets: &[NodeId]) -> Result<Vec<Value>, ExecError> {
        let root = Frame::root(self.n_rows);
        targets
            .iter()
            .map(|t| {
                if !self.dag.is_closed(*t) {
                    return Err(ExecError::Unsupported { node: *t, msg: "only closed nodes can be evaluated".into() });
                }
                self.eval(*t, &root)
            })
            .collect()
    }

    fn eval(&self, n: NodeId, frame: &Rc<Frame>) -> Result<Value, ExecError> {
        let home = self.home(n, frame)?;
        let v = self.eval_at(n, &home)?;
        if Rc::ptr_eq(&home, frame) {
            return Ok(v);
        }
        if let Value::Scalar(_) = v {
            return Ok(v);
        }
        let mut f = frame.clone();
        let mut idx: Option<Vec<usize>> = None;
        while !Rc::ptr_eq(&f, &home) {
            let (parent, pidx) = f.parent.as_ref().expect("home frame is an ancestor");
            idx = Some(match idx {
                None => pidx.clone(),
                Some(i) => i.iter().map(|&r| pidx[r]).collect(),
            });
            f = parent.clone();
        }
        v.take(&idx.unwrap_or_default(), n)
    }

    fn home(&self, n: NodeId, frame: &Rc<Frame>) -> Result<Rc<Frame>, ExecError> {
        let free = self.dag.free_levels(n);
        let mut f = frame.clone();
        loop {
            if free.is_empty() && f.parent.is_none() {
                return Ok(f);
            }
            if f.level.is_some_and(|l| free.contains(&l)) {
                return Ok(f);
            }
            match &f.parent {
                Some((p, _)) => f = p.clone(),
                None => return Err(ExecError::Unsupported { node: n, msg: "parameter used outside its map".into() }),
            }
        }
    }

    fn eval_at(&self, n: NodeId, f: &Rc<Frame>) -> Result<Value, ExecError> {
        if let Some(v) = f.memo.borrow().get(&n) {
            return Ok(v.clone());
        }
        if f.parent.is_none() {
            if let Some(v) = self.inputs.get(&n) {
                return Ok(v.clone());
            }
        }
        self.counter.fetch_add(1, Ordering::Relaxed);
        let v = self.compute(n, f)?;
        if let Some(shapes) = self.shapes {
            let s = shapes.get(n);
            debug_assert!(
                match &v {
                    Value::Scalar(_) => s.scalar,
                    Value::Events(_) => s.depth == 0,
                    other => other.depth() == Some(s.depth as usize) && !s.scalar,
                },
                "{n}: value disagrees with inferred shape {s}"
            );
        }
        f.memo.borrow_mut().insert(n, v.clone());
        Ok(v)
    }

    fn compute(&self, n: NodeId, f: &Rc<Frame>) -> Result<Value, ExecError> {
        let kernel = |source: JaggedError| ExecError::Kernel { node: n, source };
        let unsupported = |msg: String| ExecError::Unsupported { node: n, msg };
        Ok(match self.dag.kind(n) {
            NodeKind::Source { dataset } => match &self.data {
                Some(d) => Value::Events(d.clone()),
                None => return Err(ExecError::NoDataAccess(dataset.clone())),
            },
            NodeKind::Constant(s) => Value::Scalar(*s),
            NodeKind::Param { .. } => f.binding.clone().ok_or_else(|| unsupported("unbound parameter".into()))?,
            NodeKind::Attribute { parent, name } => match self.eval(*parent, f)? {
                Value::Events(d) => {
                    let (offs, table) = d
                        .collection(name)
                        .ok_or_else(|| ExecError::MissingCollection { node: n, collection: name.clone() })?;
                    let idx: Vec<i64> = (0..table.len() as i64).collect();
                    let rows = JaggedArray::new(vec![offs.to_vec()], Values::Int(idx)).map_err(kernel)?;
                    Value::Records { table: table.clone(), rows }
                }
                Value::Records { table, rows } => {
                    let col = table.column(name).ok_or_else(|| ExecError::MissingColumn {
                        node: n,
                        collection: table.collection().to_string(),
                        leaf: name.clone(),
                    })?;
                    let values = col.gather(&row_indices(&rows));
                    let (offsets, _) = rows.into_parts();
                    Value::Array(JaggedArray::new(offsets, values).map_err(kernel)?)
                }
                _ => return Err(unsupported(format!("attribute `{name}` of a plain value"))),
            },
            NodeKind::Unary { op, operand } => match self.eval(*operand, f)? {
                Value::Array(a) => Value::Array(elementwise_unary(*op, &a).map_err(kernel)?),
                Value::Scalar(s) => match s.as_f64() {
                    Some(x) if s.kind().is_numeric() => Value::Scalar(Scalar::Float(apply_unary(*op, x))),
                    _ => {
                        return Err(kernel(JaggedError::KindMismatch {
                            op: op.to_string(),
                            kinds: s.kind().to_string(),
                        }))
                    }
                },
                _ => return Err(unsupported(format!("{op} of records"))),
            },
            NodeKind::Binary { op, left, right } => {
                let (l, r) = (self.eval(*left, f)?, self.eval(*right, f)?);
                let (lo, ro) = (operand(&l, n)?, operand(&r, n)?);
                match (lo, ro) {
                    (Operand::Scalar(a), Operand::Scalar(b)) => {
                        if binary_result_kind(*op, a.kind(), b.kind()).is_none() {
                            return Err(kernel(JaggedError::KindMismatch {
                                op: op.to_string(),
                                kinds: format!("{} and {}", a.kind(), b.kind()),
                            }));
                        }
                        Value::Scalar(apply_binary(*op, a, b))
                    }
                    (lo, ro) => Value::Array(elementwise_binary(*op, lo, ro).map_err(kernel)?),
                }
            }
            NodeKind::Call { function, args } => {
                let func = self
                    .functions
                    .get(function)
                    .ok_or_else(|| ExecError::MissingFunction { node: n, name: function.clone() })?;
                let ret = self.dag.functions().get(function).map(|s| s.ret).unwrap_or(ElementKind::Float);
                let vals = args.iter().map(|a| self.eval(*a, f)).collect::<Result<Vec<_>, _>>()?;
                let ops = vals.iter().map(|v| operand(v, n)).collect::<Result<Vec<_>, _>>()?;
                call_elementwise(func, ret, &ops).map_err(kernel)?
            }
            NodeKind::Filter { seq, predicate } => {
                let s = self.eval(*seq, f)?;
                let p = self.eval(*predicate, f)?;
                let structure = match &s {
                    Value::Array(a) => a,
                    Value::Records { rows, .. } => rows,
                    _ => return Err(unsupported("filter of a non-list".into())),
                };
                let mask = match p {
                    Value::Array(m) => m,
                    Value::Scalar(Scalar::Bool(b)) => {
                        let (offsets, values) = structure.clone().into_parts();
                        JaggedArray::new(offsets, Values::Bool(vec![b; values.len()])).map_err(kernel)?
                    }
                    _ => return Err(unsupported("filter predicate is not a bool list".into())),
                };
                match s {
                    Value::Array(a) => Value::Array(mask_innermost(&a, &mask).map_err(kernel)?),
                    Value::Records { table, rows } => {
                        Value::Records { table, rows: mask_innermost(&rows, &mask).map_err(kernel)? }
                    }
                    _ => unreachable!(),
                }
            }
            NodeKind::Map { seq, param, body } => {
                let NodeKind::Param { binder, .. } = self.dag.kind(*param) else {
                    return Err(unsupported("map without a parameter".into()));
                };
                let s = self.eval(*seq, f)?;
                let (structure, binding) = match &s {
                    Value::Array(a) if a.depth() > 0 => (a, Value::Array(JaggedArray::flat(a.values().clone()))),
                    Value::Records { table, rows } if rows.depth() > 0 => {
                        (rows, Value::Records { table: table.clone(), rows: JaggedArray::flat(rows.values().clone()) })
                    }
                    _ => return Err(unsupported("map over a non-list".into())),
                };
                let outer = structure.offsets().to_vec();
                let child = Rc::new(Frame {
                    level: Some(*binder),
                    parent: Some((f.clone(), structure.innermost_rows())),
                    binding: Some(binding),
                    rows: structure.values().len(),
                    memo: RefCell::new(HashMap::new()),
                });
                match self.eval(*body, &child)? {
                    Value::Scalar(v) => {
                        Value::Array(JaggedArray::filled(child.rows, v).nest_under(&outer).map_err(kernel)?)
                    }
                    Value::Array(a) => Value::Array(a.nest_under(&outer).map_err(kernel)?),
                    Value::Records { table, rows } => {
                        Value::Records { table, rows: rows.nest_under(&outer).map_err(kernel)? }
                    }
                    Value::Events(_) => return Err(unsupported("map body returns the event table".into())),
                }
            }
            NodeKind::Aggregate { op, seq } => match self.eval(*seq, f)? {
                Value::Array(a) => Value::Array(reduce_innermost(*op, &a).map_err(kernel)?),
                Value::Records { table, rows } => match op {
                    AggregateOp::Count => Value::Array(reduce_innermost(*op, &rows).map_err(kernel)?),
                    AggregateOp::First => Value::Records { table, rows: reduce_innermost(*op, &rows).map_err(kernel)? },
                    _ => return Err(kernel(JaggedError::KindMismatch { op: op.to_string(), kinds: "records".into() })),
                },
                _ => return Err(kernel(JaggedError::DepthTooSmall { op: op.to_string(), required: 1, actual: 0 })),
            },
            NodeKind::Invalid(e) => return Err(unsupported(e.to_string())),
        })
    }
}

fn operand(v: &Value, node: NodeId) -> Result<Operand<'_>, ExecError> {
    match v {
        Value::Array(a) => Ok(Operand::Array(a)),
        Value::Scalar(s) => Ok(Operand::Scalar(*s)),
        _ => Err(ExecError::Unsupported { node, msg: "records used as a number".into() }),
    }
}

fn call_elementwise(func: NativeFn, ret: ElementKind, args: &[Operand<'_>]) -> Result<Value, JaggedError> {
    let arrays: Vec<&JaggedArray> = args
        .iter()
        .filter_map(|a| match a {
            Operand::Array(x) => Some(*x),
            Operand::Scalar(_) => None,
        })
        .collect();
    let get = |a: &Operand<'_>, i: usize| match a {
        Operand::Array(x) => x.values().get(i),
        Operand::Scalar(s) => *s,
    };
    let Some(first) = arrays.first() else {
        let vals: Vec<Scalar> = args.iter().map(|a| get(a, 0)).collect();
        return Ok(Value::Scalar(func(&vals)));
    };
    if arrays.iter().any(|a| a.offsets() != first.offsets() || a.rows() != first.rows()) {
        return Err(JaggedError::ShapeMismatch { op: "call".into() });
    }
    let n = first.values().len();
    let mut buf = Vec::with_capacity(args.len());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        buf.extend(args.iter().map(|a| get(a, i)));
        out.push(func(&buf));
    }
    if out.iter().any(|v| v.kind() != ret) {
        return Err(JaggedError::KindMismatch { op: "call".into(), kinds: format!("result is not {ret}") });
    }
    JaggedArray::new(first.offsets().to_vec(), Values::from_scalars(ret, out)).map(Value::Array)
}

/// The local backend: the columnar interpreter plus, when allowed, direct
/// access to datasets.
#[derive(Debug, Clone, Default)]
pub struct LocalExecutor {
    functions: FunctionTable,
    evaluations: Arc<AtomicU64>,
}

impl LocalExecutor {
    pub fn new(functions: FunctionTable) -> Self {
        LocalExecutor { functions, evaluations: Arc::new(AtomicU64::new(0)) }
    }

    pub fn functions(&self) -> &FunctionTable {
        &self.functions
    }

    /// Number of node evaluations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Evaluates closed `targets` over `n_rows` events.
    pub fn run(
        &self,
        dag: &CanonicalDag,
        shapes: Option<&ShapeMap>,
        data: Option<Arc<EventData>>,
        n_rows: usize,
        inputs: &HashMap<NodeId, Value>,
        targets: &[NodeId],
    ) -> Result<Vec<Value>, ExecError> {
        let mut ev = Evaluator::new(dag, data, n_rows, inputs, &self.functions, &self.evaluations);
        if let Some(s) = shapes {
            ev = ev.with_shapes(s);
        }
        ev.evaluate(targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_events, EventData};
    use crate::expr::{canonicalize, ExprHandle};
    use crate::jagged::Nested;
    use crate::schema::{infer, DatasetSchema};

    const EVENTS: &str = r#"{"Electrons":[{"pt":50000.0,"eta":0.5,"phi":0.0},{"pt":20000.0,"eta":2.0,"phi":3.0}],"Jets":[{"pt":1.0,"eta":0.5,"phi":0.1,"isGood":true}]}
{"Electrons":[{"pt":60000.0,"eta":-1.0,"phi":-3.0}],"Jets":[{"pt":2.0,"eta":0.0,"phi":3.0,"isGood":false},{"pt":3.0,"eta":-1.0,"phi":-2.9,"isGood":true}]}
{}
"#;

    fn data() -> Arc<EventData> {
        let schema = DatasetSchema::default_model();
        Arc::new(EventData::from_events(&schema, &parse_events(EVENTS, &schema).unwrap()).unwrap())
    }

    fn run(h: &ExprHandle) -> Result<JaggedArray, ExecError> {
        let dag = canonicalize(&[h]).unwrap();
        let shapes = infer(&dag, &DatasetSchema::default_model(), true).unwrap();
        let exec = LocalExecutor::default();
        let d = data();
        let n = d.n_events();
        let root = dag.roots()[0];
        let v = exec.run(&dag, Some(&shapes), Some(d), n, &HashMap::new(), &[root])?;
        v.into_iter().next().unwrap().into_array(n, root)
    }

    fn graph() -> Graph {
        let g = Graph::new();
        FunctionTable::builtins().declare_all(&g).unwrap();
        g
    }

    #[test]
    fn delta_r_wraps_phi() {
        assert!((delta_r(0.0, 3.0, 0.0, -3.0) - (TAU - 6.0)).abs() < 1e-12);
        assert_eq!(delta_r(0.0, PI, 0.0, -PI), 0.0);
        assert!((delta_r(1.0, 0.0, 0.0, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn leaf_filter_and_scale() {
        let g = graph();
        let eles = g.source("ds").attr("Electrons");
        let r = eles.filter(eles.attr("pt").gt(30000.0)).attr("pt") / 1000.0;
        let r = run(&r).unwrap();
        assert_eq!(r, JaggedArray::from_rows(&[vec![50.0], vec![60.0], vec![]]));
    }

    #[test]
    fn counts_and_first() {
        let g = graph();
        let eles = g.source("ds").attr("Electrons");
        assert_eq!(run(&eles.count()).unwrap(), JaggedArray::flat(Values::Int(vec![2, 1, 0])));
        let e = run(&eles.first().attr("pt")).unwrap_err();
        assert!(matches!(e, ExecError::Kernel { source: JaggedError::EmptySequence { row: 2, .. }, .. }), "{e}");
    }

    #[test]
    fn nested_map_with_capture() {
        let g = graph();
        let df = g.source("ds");
        let dr = df.attr("Jets").map(|j| {
            df.attr("Electrons")
                .map(|e| g.call("DeltaR", &[&j.attr("eta"), &j.attr("phi"), &e.attr("eta"), &e.attr("phi")]).unwrap())
        });
        let r = run(&dr).unwrap();
        assert_eq!(r.depth(), 2);
        let nested = r.to_nested();
        let Nested::List(jets) = &nested[1] else { panic!() };
        assert_eq!(jets.len(), 2);
        let Nested::List(es) = &jets[0] else { panic!() };
        let Nested::Leaf(Scalar::Float(x)) = es[0] else { panic!() };
        assert!((x - delta_r(0.0, 3.0, -1.0, -3.0)).abs() < 1e-15);
        assert_eq!(nested[2], Nested::List(vec![]));
    }

    #[test]
    fn closest_match_count_per_jet() {
        let g = graph();
        let df = g.source("ds");
        let near = df.attr("Jets").map(|j| {
            let eles = df.attr("Electrons");
            eles.filter_with(|e| {
                g.call("DeltaR", &[&j.attr("eta"), &j.attr("phi"), &e.attr("eta"), &e.attr("phi")]).unwrap().lt(0.5)
            })
            .count()
        });
        let r = run(&near).unwrap();
        assert_eq!(r, JaggedArray::new(vec![vec![0, 1, 3, 3]], Values::Int(vec![1, 0, 1])).unwrap());
    }

    #[test]
    fn evaluation_is_memoized() {
        let g = graph();
        let pt = g.source("ds").attr("Electrons").attr("pt");
        let x = &pt + &pt;
        let dag = canonicalize(&[&x]).unwrap();
        let exec = LocalExecutor::default();
        exec.run(&dag, None, Some(data()), 3, &HashMap::new(), dag.roots()).unwrap();
        assert_eq!(exec.evaluations(), dag.len() as u64);
    }

    #[test]
    fn missing_data_access() {
        let g = graph();
        let pt = g.source("ds").attr("Electrons").attr("pt");
        let dag = canonicalize(&[&pt]).unwrap();
        let e = LocalExecutor::default().run(&dag, None, None, 3, &HashMap::new(), dag.roots()).unwrap_err();
        assert!(matches!(e, ExecError::NoDataAccess(_)));
    }
}

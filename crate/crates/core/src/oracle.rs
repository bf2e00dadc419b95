//! Brute-force reference evaluator.
//!
//! Walks every event's raw records with explicit loops and scalar math. It
//! shares no evaluation code with the executors: only the DAG, the raw event
//! view and the scalar/nested value types are common.
//!
//! Evaluation is eager in the same sense as the columnar interpreter: every
//! node is computed once per binding of its innermost free parameter (once
//! per event for closed nodes), whether or not an enclosing list turns out to
//! be empty. That makes the set of raised errors, not just the values, agree.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use thiserror::Error;

use crate::dataset::{RawEvent, RawRecord};
use crate::error::ErrorCategory;
use crate::expr::{CanonicalDag, NodeId, NodeKind, Origin};
use crate::jagged::{ElementKind, JaggedArray, Nested, Scalar};
use crate::ops::{AggregateOp, BinaryOp, UnaryOp};
use crate::schema::DatasetSchema;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{category}: {message}")]
pub struct OracleError {
    pub category: ErrorCategory,
    pub message: String,
}

fn fail<T>(category: ErrorCategory, message: impl Into<String>) -> Result<T, OracleError> {
    Err(OracleError { category, message: message.into() })
}

pub type OracleFn = fn(&[Scalar]) -> Option<Scalar>;

/// Angular separation with the azimuthal difference wrapped into (-pi, pi].
pub fn oracle_delta_r(eta1: f64, phi1: f64, eta2: f64, phi2: f64) -> f64 {
    let deta = eta1 - eta2;
    let mut dphi = phi1 - phi2;
    while dphi > PI {
        dphi -= 2.0 * PI;
    }
    while dphi <= -PI {
        dphi += 2.0 * PI;
    }
    (deta * deta + dphi * dphi).sqrt()
}

fn delta_r_fn(args: &[Scalar]) -> Option<Scalar> {
    let mut xs = [0.0; 4];
    if args.len() != 4 {
        return None;
    }
    for (x, a) in xs.iter_mut().zip(args) {
        *x = match *a {
            Scalar::Float(v) => v,
            Scalar::Int(v) => v as f64,
            Scalar::Bool(_) => return None,
        };
    }
    Some(Scalar::Float(oracle_delta_r(xs[0], xs[1], xs[2], xs[3])))
}

#[derive(Debug, Clone)]
enum OVal {
    Event,
    Record { collection: String, index: usize },
    Scalar(Scalar),
    List(Vec<OVal>),
}

struct Scope {
    level: Option<u32>,
    binding: Option<OVal>,
    memo: RefCell<HashMap<NodeId, OVal>>,
}

/// Static facts the oracle derives for itself.
struct Facts {
    depth: Vec<usize>,
    kind: Vec<Option<ElementKind>>,
    constant: Vec<bool>,
    /// For each map: body nodes owned by its parameter's scope.
    eager: HashMap<NodeId, Vec<NodeId>>,
    closed: Vec<NodeId>,
}

pub struct Oracle<'a> {
    dag: &'a CanonicalDag,
    functions: BTreeMap<String, OracleFn>,
    facts: Facts,
}

fn result_kind(op: BinaryOp, l: ElementKind, r: ElementKind) -> Option<ElementKind> {
    use ElementKind::*;
    let numeric = |k: ElementKind| k == Int || k == Float;
    match op {
        BinaryOp::And | BinaryOp::Or => (l == Bool && r == Bool).then_some(Bool),
        BinaryOp::Eq | BinaryOp::Ne => ((l == Bool) == (r == Bool)).then_some(Bool),
        BinaryOp::Lt | BinaryOp::Gt | BinaryOp::Le | BinaryOp::Ge => (numeric(l) && numeric(r)).then_some(Bool),
        BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul => {
            if !numeric(l) || !numeric(r) {
                None
            } else if l == Int && r == Int {
                Some(Int)
            } else {
                Some(Float)
            }
        }
        BinaryOp::Div | BinaryOp::Atan2 => (numeric(l) && numeric(r)).then_some(Float),
    }
}

impl<'a> Oracle<'a> {
    pub fn new(dag: &'a CanonicalDag, schema: &DatasetSchema) -> Self {
        let n = dag.len();
        let mut depth = vec![0usize; n];
        let mut kind: Vec<Option<ElementKind>> = vec![None; n];
        let mut constant = vec![false; n];
        for id in dag.ids() {
            let i = id.index();
            let (d, k, c) = match dag.kind(id) {
                NodeKind::Source { .. } => (0, None, false),
                NodeKind::Constant(s) => (0, Some(s.kind()), true),
                NodeKind::Param { seq, .. } => (0, kind[seq.index()], false),
                NodeKind::Attribute { parent, name } => match dag.origin(*parent) {
                    Origin::Events => (1, None, false),
                    Origin::Records { collection, .. } => {
                        let k = schema.leaf(collection, name).unwrap_or(ElementKind::Float);
                        (depth[parent.index()], Some(k), false)
                    }
                    Origin::Value => (depth[parent.index()], None, false),
                },
                NodeKind::Binary { op, left, right } => {
                    let k = match (kind[left.index()], kind[right.index()]) {
                        (Some(a), Some(b)) => result_kind(*op, a, b),
                        _ => None,
                    };
                    (
                        depth[left.index()].max(depth[right.index()]),
                        k,
                        constant[left.index()] && constant[right.index()],
                    )
                }
                NodeKind::Unary { operand, .. } => {
                    (depth[operand.index()], Some(ElementKind::Float), constant[operand.index()])
                }
                NodeKind::Call { function, args } => (
                    args.iter().map(|a| depth[a.index()]).max().unwrap_or(0),
                    dag.functions().get(function).map(|s| s.ret),
                    args.iter().all(|a| constant[a.index()]),
                ),
                NodeKind::Filter { seq, .. } => (depth[seq.index()], kind[seq.index()], false),
                NodeKind::Map { seq, body, .. } => {
                    (depth[seq.index()] + depth[body.index()], kind[body.index()], false)
                }
                NodeKind::Aggregate { op, seq } => {
                    let k = match op {
                        AggregateOp::Count => Some(ElementKind::Int),
                        AggregateOp::Any | AggregateOp::All => Some(ElementKind::Bool),
                        _ => kind[seq.index()],
                    };
                    (depth[seq.index()].saturating_sub(1), k, false)
                }
                NodeKind::Invalid(_) => (0, None, false),
            };
            depth[i] = d;
            kind[i] = k;
            constant[i] = c;
        }
        let mut eager = HashMap::new();
        for id in dag.ids() {
            if let NodeKind::Map { param, body, .. } = dag.kind(id) {
                let NodeKind::Param { binder, .. } = dag.kind(*param) else { continue };
                let owned: Vec<NodeId> = dag
                    .reachable(&[*body])
                    .into_iter()
                    .filter(|m| dag.free_levels(*m).iter().max() == Some(binder))
                    .collect();
                eager.insert(id, owned);
            }
        }
        let closed = dag.reachable(dag.roots()).into_iter().filter(|m| dag.is_closed(*m)).collect();
        let mut functions: BTreeMap<String, OracleFn> = BTreeMap::new();
        functions.insert("DeltaR".into(), delta_r_fn);
        Oracle { dag, functions, facts: Facts { depth, kind, constant, eager, closed } }
    }

    pub fn with_function(mut self, name: &str, f: OracleFn) -> Self {
        self.functions.insert(name.into(), f);
        self
    }

    /// Per-event nested values of every root.
    pub fn eval(&self, events: &[RawEvent]) -> Result<Vec<Vec<Nested>>, OracleError> {
        let roots = self.dag.roots();
        let mut out: Vec<Vec<Nested>> = vec![Vec::with_capacity(events.len()); roots.len()];
        for event in events {
            let ctx = Ctx { oracle: self, event };
            let root = Scope { level: None, binding: None, memo: RefCell::new(HashMap::new()) };
            let scopes = [&root];
            for n in &self.facts.closed {
                ctx.eval(*n, &scopes)?;
            }
            for (slot, r) in out.iter_mut().zip(roots) {
                slot.push(to_nested(ctx.eval(*r, &scopes)?)?);
            }
        }
        Ok(out)
    }

    /// Like [`Oracle::eval`], converted to arrays for comparison.
    pub fn eval_arrays(&self, events: &[RawEvent]) -> Result<Vec<JaggedArray>, OracleError> {
        let rows = self.eval(events)?;
        self.dag
            .roots()
            .iter()
            .zip(rows)
            .map(|(r, rows)| {
                let kind = self.facts.kind[r.index()].unwrap_or(ElementKind::Float);
                JaggedArray::from_nested(&rows, self.facts.depth[r.index()], kind)
                    .or_else(|e| fail(ErrorCategory::Internal, e.to_string()))
            })
            .collect()
    }
}

fn to_nested(v: OVal) -> Result<Nested, OracleError> {
    match v {
        OVal::Scalar(s) => Ok(Nested::Leaf(s)),
        OVal::List(xs) => Ok(Nested::List(xs.into_iter().map(to_nested).collect::<Result<_, _>>()?)),
        OVal::Event | OVal::Record { .. } => fail(ErrorCategory::Internal, "records cannot be materialized"),
    }
}

struct Ctx<'o, 'e> {
    oracle: &'o Oracle<'o>,
    event: &'e RawEvent,
}

impl Ctx<'_, '_> {
    fn eval(&self, n: NodeId, scopes: &[&Scope]) -> Result<OVal, OracleError> {
        let dag = self.oracle.dag;
        let home = match dag.free_levels(n).iter().max() {
            None => 0,
            Some(l) => match scopes.iter().rposition(|s| s.level == Some(*l)) {
                Some(k) => k,
                None => return fail(ErrorCategory::Internal, format!("{n}: parameter outside its map")),
            },
        };
        let scopes = &scopes[..=home];
        if let Some(v) = scopes[home].memo.borrow().get(&n) {
            return Ok(v.clone());
        }
        let v = self.compute(n, scopes)?;
        scopes[home].memo.borrow_mut().insert(n, v.clone());
        Ok(v)
    }

    fn record(&self, collection: &str, index: usize) -> &RawRecord {
        &self.event.records(collection)[index]
    }

    fn compute(&self, n: NodeId, scopes: &[&Scope]) -> Result<OVal, OracleError> {
        let dag = self.oracle.dag;
        let facts = &self.oracle.facts;
        match dag.kind(n) {
            NodeKind::Source { .. } => Ok(OVal::Event),
            NodeKind::Constant(s) => Ok(OVal::Scalar(*s)),
            NodeKind::Param { .. } => match &scopes.last().unwrap().binding {
                Some(b) => Ok(b.clone()),
                None => fail(ErrorCategory::Internal, "unbound parameter"),
            },
            NodeKind::Attribute { parent, name } => {
                let p = self.eval(*parent, scopes)?;
                self.attribute(p, name)
            }
            NodeKind::Unary { op, operand } => {
                let v = self.eval(*operand, scopes)?;
                map_leaves(v, &mut |s| unary(*op, s))
            }
            NodeKind::Binary { op, left, right } => {
                let (l, r) = (self.eval(*left, scopes)?, self.eval(*right, scopes)?);
                let (lc, rc) = (facts.constant[left.index()], facts.constant[right.index()]);
                if !lc && !rc && facts.depth[left.index()] != facts.depth[right.index()] {
                    return fail(ErrorCategory::ShapeMismatch, format!("{n}: operands differ in depth"));
                }
                zip_leaves(&[l, r], &mut |xs| binary(*op, xs[0], xs[1]))
            }
            NodeKind::Call { function, args } => {
                let f = match self.oracle.functions.get(function) {
                    Some(f) => *f,
                    None => return fail(ErrorCategory::Plan, format!("function `{function}` is unknown")),
                };
                let vals = args.iter().map(|a| self.eval(*a, scopes)).collect::<Result<Vec<_>, _>>()?;
                let depths: Vec<usize> =
                    args.iter().filter(|a| !facts.constant[a.index()]).map(|a| facts.depth[a.index()]).collect();
                if depths.windows(2).any(|w| w[0] != w[1]) {
                    return fail(ErrorCategory::ShapeMismatch, format!("{n}: arguments differ in depth"));
                }
                let ret = dag.functions().get(function).map(|s| s.ret);
                zip_leaves(&vals, &mut |xs| match f(xs) {
                    Some(v) if Some(v.kind()) == ret || ret.is_none() => Ok(v),
                    _ => fail(ErrorCategory::KindMismatch, format!("bad call to `{function}`")),
                })
            }
            NodeKind::Filter { seq, predicate } => {
                let s = self.eval(*seq, scopes)?;
                let p = self.eval(*predicate, scopes)?;
                if facts.depth[seq.index()] == 0 {
                    return fail(ErrorCategory::Internal, "filter of a non-list");
                }
                if let OVal::Scalar(Scalar::Bool(keep)) = p {
                    if facts.constant[predicate.index()] {
                        return Ok(filter_all(s, facts.depth[seq.index()], keep));
                    }
                }
                if facts.depth[predicate.index()] != facts.depth[seq.index()] {
                    return fail(ErrorCategory::ShapeMismatch, format!("{n}: mask has another structure"));
                }
                filter(s, p, facts.depth[seq.index()])
            }
            NodeKind::Map { seq, param, body } => {
                let NodeKind::Param { binder, .. } = dag.kind(*param) else {
                    return fail(ErrorCategory::Internal, "map without a parameter");
                };
                let s = self.eval(*seq, scopes)?;
                let d = facts.depth[seq.index()];
                if d == 0 {
                    return fail(ErrorCategory::Internal, "map over a non-list");
                }
                let eager = &facts.eager[&n];
                self.map_innermost(s, d, &mut |elem| {
                    let scope = Scope { level: Some(*binder), binding: Some(elem), memo: RefCell::new(HashMap::new()) };
                    let mut inner = scopes.to_vec();
                    inner.push(&scope);
                    for m in eager {
                        self.eval(*m, &inner)?;
                    }
                    self.eval(*body, &inner)
                })
            }
            NodeKind::Aggregate { op, seq } => {
                let s = self.eval(*seq, scopes)?;
                let d = facts.depth[seq.index()];
                if d == 0 {
                    return fail(ErrorCategory::Internal, format!("{op} of a non-list"));
                }
                let kind = facts.kind[seq.index()];
                reduce(*op, s, d, kind)
            }
            NodeKind::Invalid(e) => fail(ErrorCategory::Build, e.to_string()),
        }
    }

    fn attribute(&self, v: OVal, name: &str) -> Result<OVal, OracleError> {
        match v {
            OVal::Event => {
                let n = self.event.records(name).len();
                Ok(OVal::List((0..n).map(|index| OVal::Record { collection: name.to_string(), index }).collect()))
            }
            OVal::Record { collection, index } => match self.record(&collection, index).get(name) {
                Some(s) => Ok(OVal::Scalar(*s)),
                None => fail(ErrorCategory::Data, format!("`{collection}` record has no `{name}`")),
            },
            OVal::List(xs) => {
                Ok(OVal::List(xs.into_iter().map(|x| self.attribute(x, name)).collect::<Result<_, _>>()?))
            }
            OVal::Scalar(_) => fail(ErrorCategory::Internal, format!("attribute `{name}` of a plain value")),
        }
    }

    fn map_innermost(
        &self,
        v: OVal,
        depth: usize,
        f: &mut dyn FnMut(OVal) -> Result<OVal, OracleError>,
    ) -> Result<OVal, OracleError> {
        let OVal::List(xs) = v else { return fail(ErrorCategory::Internal, "expected a list") };
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            out.push(if depth == 1 { f(x)? } else { self.map_innermost(x, depth - 1, f)? });
        }
        Ok(OVal::List(out))
    }
}

fn as_f64(s: Scalar) -> Option<f64> {
    match s {
        Scalar::Float(v) => Some(v),
        Scalar::Int(v) => Some(v as f64),
        Scalar::Bool(_) => None,
    }
}

fn unary(op: UnaryOp, s: Scalar) -> Result<Scalar, OracleError> {
    let Some(x) = as_f64(s) else { return fail(ErrorCategory::KindMismatch, format!("{op} of a bool")) };
    Ok(Scalar::Float(match op {
        UnaryOp::Neg => -x,
        UnaryOp::Abs => x.abs(),
        UnaryOp::Sqrt => x.sqrt(),
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
    }))
}

fn binary(op: BinaryOp, a: Scalar, b: Scalar) -> Result<Scalar, OracleError> {
    if result_kind(op, a.kind(), b.kind()).is_none() {
        return fail(ErrorCategory::KindMismatch, format!("{op} of {} and {}", a.kind(), b.kind()));
    }
    if let (Scalar::Bool(x), Scalar::Bool(y)) = (a, b) {
        return Ok(Scalar::Bool(match op {
            BinaryOp::And => x && y,
            BinaryOp::Or => x || y,
            BinaryOp::Eq => x == y,
            BinaryOp::Ne => x != y,
            _ => unreachable!(),
        }));
    }
    if let (Scalar::Int(x), Scalar::Int(y)) = (a, b) {
        match op {
            BinaryOp::Add => return Ok(Scalar::Int(x.wrapping_add(y))),
            BinaryOp::Sub => return Ok(Scalar::Int(x.wrapping_sub(y))),
            BinaryOp::Mul => return Ok(Scalar::Int(x.wrapping_mul(y))),
            BinaryOp::Lt => return Ok(Scalar::Bool(x < y)),
            BinaryOp::Gt => return Ok(Scalar::Bool(x > y)),
            BinaryOp::Le => return Ok(Scalar::Bool(x <= y)),
            BinaryOp::Ge => return Ok(Scalar::Bool(x >= y)),
            BinaryOp::Eq => return Ok(Scalar::Bool(x == y)),
            BinaryOp::Ne => return Ok(Scalar::Bool(x != y)),
            _ => {}
        }
    }
    let (x, y) = (as_f64(a).unwrap(), as_f64(b).unwrap());
    Ok(match op {
        BinaryOp::Add => Scalar::Float(x + y),
        BinaryOp::Sub => Scalar::Float(x - y),
        BinaryOp::Mul => Scalar::Float(x * y),
        BinaryOp::Div => Scalar::Float(x / y),
        BinaryOp::Atan2 => Scalar::Float(x.atan2(y)),
        BinaryOp::Lt => Scalar::Bool(x < y),
        BinaryOp::Gt => Scalar::Bool(x > y),
        BinaryOp::Le => Scalar::Bool(x <= y),
        BinaryOp::Ge => Scalar::Bool(x >= y),
        BinaryOp::Eq => Scalar::Bool(x == y),
        BinaryOp::Ne => Scalar::Bool(x != y),
        BinaryOp::And | BinaryOp::Or => unreachable!(),
    })
}

fn map_leaves(v: OVal, f: &mut dyn FnMut(Scalar) -> Result<Scalar, OracleError>) -> Result<OVal, OracleError> {
    match v {
        OVal::Scalar(s) => Ok(OVal::Scalar(f(s)?)),
        OVal::List(xs) => Ok(OVal::List(xs.into_iter().map(|x| map_leaves(x, f)).collect::<Result<_, _>>()?)),
        _ => fail(ErrorCategory::Internal, "records used as a number"),
    }
}

/// Applies `f` to aligned leaves; plain scalars repeat against lists.
fn zip_leaves(vals: &[OVal], f: &mut dyn FnMut(&[Scalar]) -> Result<Scalar, OracleError>) -> Result<OVal, OracleError> {
    let len = vals.iter().find_map(|v| match v {
        OVal::List(xs) => Some(xs.len()),
        _ => None,
    });
    let Some(len) = len else {
        let mut xs = Vec::with_capacity(vals.len());
        for v in vals {
            match v {
                OVal::Scalar(s) => xs.push(*s),
                _ => return fail(ErrorCategory::Internal, "records used as a number"),
            }
        }
        return Ok(OVal::Scalar(f(&xs)?));
    };
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut row = Vec::with_capacity(vals.len());
        for v in vals {
            row.push(match v {
                OVal::List(xs) if xs.len() == len => xs[i].clone(),
                OVal::List(_) => return fail(ErrorCategory::ShapeMismatch, "lists differ in length"),
                other => other.clone(),
            });
        }
        out.push(zip_leaves(&row, f)?);
    }
    Ok(OVal::List(out))
}

fn filter_all(v: OVal, depth: usize, keep: bool) -> OVal {
    match v {
        OVal::List(xs) if depth == 1 => OVal::List(if keep { xs } else { Vec::new() }),
        OVal::List(xs) => OVal::List(xs.into_iter().map(|x| filter_all(x, depth - 1, keep)).collect()),
        other => other,
    }
}

fn filter(v: OVal, mask: OVal, depth: usize) -> Result<OVal, OracleError> {
    let (OVal::List(xs), OVal::List(ms)) = (v, mask) else {
        return fail(ErrorCategory::ShapeMismatch, "mask has another structure");
    };
    if xs.len() != ms.len() {
        return fail(ErrorCategory::ShapeMismatch, "mask has another length");
    }
    let mut out = Vec::new();
    for (x, m) in xs.into_iter().zip(ms) {
        if depth == 1 {
            match m {
                OVal::Scalar(Scalar::Bool(true)) => out.push(x),
                OVal::Scalar(Scalar::Bool(false)) => {}
                _ => return fail(ErrorCategory::KindMismatch, "mask is not bool"),
            }
        } else {
            out.push(filter(x, m, depth - 1)?);
        }
    }
    Ok(OVal::List(out))
}

fn reduce(op: AggregateOp, v: OVal, depth: usize, kind: Option<ElementKind>) -> Result<OVal, OracleError> {
    let OVal::List(xs) = v else { return fail(ErrorCategory::Internal, "expected a list") };
    if depth > 1 {
        return Ok(OVal::List(xs.into_iter().map(|x| reduce(op, x, depth - 1, kind)).collect::<Result<_, _>>()?));
    }
    let empty = || fail(ErrorCategory::EmptySequence, format!("{op} of an empty list"));
    match op {
        AggregateOp::Count => return Ok(OVal::Scalar(Scalar::Int(xs.len() as i64))),
        AggregateOp::First => return xs.into_iter().next().map_or_else(empty, Ok),
        _ => {}
    }
    let mut leaves = Vec::with_capacity(xs.len());
    for x in xs {
        match x {
            OVal::Scalar(s) => leaves.push(s),
            _ => return fail(ErrorCategory::KindMismatch, format!("{op} of records")),
        }
    }
    let result = match op {
        AggregateOp::Sum => match kind {
            Some(ElementKind::Int) => {
                let mut acc = 0i64;
                for s in &leaves {
                    let Scalar::Int(x) = s else { return fail(ErrorCategory::KindMismatch, "mixed sum") };
                    acc = acc.wrapping_add(*x);
                }
                Scalar::Int(acc)
            }
            Some(ElementKind::Float) => {
                let mut acc = 0.0;
                for s in &leaves {
                    let Scalar::Float(x) = s else { return fail(ErrorCategory::KindMismatch, "mixed sum") };
                    acc += x;
                }
                Scalar::Float(acc)
            }
            _ => return fail(ErrorCategory::KindMismatch, "sum of non-numbers"),
        },
        AggregateOp::Min | AggregateOp::Max => {
            let Some((&first, rest)) = leaves.split_first() else { return empty() };
            let mut best = first;
            for &x in rest {
                best = match (best, x) {
                    (Scalar::Int(a), Scalar::Int(b)) => {
                        Scalar::Int(if op == AggregateOp::Min { a.min(b) } else { a.max(b) })
                    }
                    // f64::min/max: a NaN operand yields the other one.
                    (Scalar::Float(a), Scalar::Float(b)) => {
                        Scalar::Float(if op == AggregateOp::Min { a.min(b) } else { a.max(b) })
                    }
                    _ => return fail(ErrorCategory::KindMismatch, format!("{op} of non-numbers")),
                };
            }
            best
        }
        AggregateOp::Any | AggregateOp::All => {
            let mut acc = op == AggregateOp::All;
            for s in &leaves {
                let Scalar::Bool(b) = s else { return fail(ErrorCategory::KindMismatch, format!("{op} of non-bools")) };
                if op == AggregateOp::All {
                    acc = acc && *b;
                } else {
                    acc = acc || *b;
                }
            }
            Scalar::Bool(acc)
        }
        AggregateOp::Count | AggregateOp::First => unreachable!(),
    };
    Ok(OVal::Scalar(result))
}

/// Compares an engine result against oracle rows: exact for Int and Bool,
/// within `rel_tol` relative for Float (NaNs compare equal).
pub fn compare(engine: &JaggedArray, oracle: &[Nested], rel_tol: f64) -> Result<(), String> {
    let rows = engine.to_nested();
    if rows.len() != oracle.len() {
        return Err(format!("{} rows against {} from the oracle", rows.len(), oracle.len()));
    }
    fn cmp(a: &Nested, b: &Nested, tol: f64, path: &mut Vec<usize>) -> Result<(), String> {
        match (a, b) {
            (Nested::Leaf(x), Nested::Leaf(y)) => {
                let ok = match (x, y) {
                    (Scalar::Float(p), Scalar::Float(q)) => {
                        (p.is_nan() && q.is_nan()) || p == q || (p - q).abs() <= tol * p.abs().max(q.abs())
                    }
                    _ => x == y,
                };
                if ok {
                    Ok(())
                } else {
                    Err(format!("at {path:?}: engine {x} != oracle {y}"))
                }
            }
            (Nested::List(xs), Nested::List(ys)) if xs.len() == ys.len() => {
                for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
                    path.push(i);
                    cmp(x, y, tol, path)?;
                    path.pop();
                }
                Ok(())
            }
            _ => Err(format!("at {path:?}: structure differs: engine {a:?}, oracle {b:?}")),
        }
    }
    for (i, (a, b)) in rows.iter().zip(oracle).enumerate() {
        cmp(a, b, rel_tol, &mut vec![i])?;
    }
    Ok(())
}

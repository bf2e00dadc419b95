//! Recording layer: user operations become nodes of an immutable,
//! hash-consed expression DAG. Nothing here touches data.
//!
//! Handles ([`ExprHandle`]) are cheap to clone and compose with ordinary
//! methods and operators. Per-element functions passed to
//! [`ExprHandle::filter_with`], [`ExprHandle::map`] and
//! [`Graph::define_alias`] are invoked exactly once, with a fresh parameter
//! handle, and the operations performed on it are recorded.
//!
//! A few rewrites happen while recording:
//! - `seq.map(|e| f(e))` where `f` only does elementwise math on leaves of
//!   `e` is recorded as the collection-level expression `f(seq)`, so
//!   `jets.pt / 1000` and `jets.map(|j| j.pt / 1000)` are the same node.
//! - `map` on a single record (a bound parameter or `First`) applies the
//!   function directly.
//! - attribute access consults the alias table by collection, so aliases
//!   survive filters.

mod canon;

pub use canon::{canonicalize, CanonicalDag};

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::jagged::{ElementKind, Scalar};
use crate::ops::{AggregateOp, BinaryOp, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// One recorded operation.
///
/// `Filter` keeps innermost elements of `seq` where `predicate` (a Bool
/// expression with the same structure as `seq`, usually a per-element `Map`)
/// is true. `Param` refers to the element currently bound by the enclosing
/// `Map` over `seq`; in build graphs `binder` is a unique id, in canonical
/// graphs it is the lambda nesting level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Source { dataset: String },
    Attribute { parent: NodeId, name: String },
    Binary { op: BinaryOp, left: NodeId, right: NodeId },
    Unary { op: UnaryOp, operand: NodeId },
    Filter { seq: NodeId, predicate: NodeId },
    Map { seq: NodeId, param: NodeId, body: NodeId },
    Aggregate { op: AggregateOp, seq: NodeId },
    Call { function: String, args: Vec<NodeId> },
    Constant(Scalar),
    Param { binder: u32, seq: NodeId },
    Invalid(BuildError),
}

impl NodeKind {
    /// Data inputs. `Param` has none: its `seq` is a type annotation.
    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            NodeKind::Attribute { parent, .. } => vec![*parent],
            NodeKind::Binary { left, right, .. } => vec![*left, *right],
            NodeKind::Unary { operand, .. } => vec![*operand],
            NodeKind::Filter { seq, predicate } => vec![*seq, *predicate],
            NodeKind::Map { seq, body, .. } => vec![*seq, *body],
            NodeKind::Aggregate { seq, .. } => vec![*seq],
            NodeKind::Call { args, .. } => args.clone(),
            NodeKind::Source { .. } | NodeKind::Constant(_) | NodeKind::Param { .. } | NodeKind::Invalid(_) => {
                Vec::new()
            }
        }
    }

    fn rewrite(&self, mut f: impl FnMut(NodeId) -> NodeId) -> NodeKind {
        match self {
            NodeKind::Attribute { parent, name } => NodeKind::Attribute { parent: f(*parent), name: name.clone() },
            NodeKind::Binary { op, left, right } => NodeKind::Binary { op: *op, left: f(*left), right: f(*right) },
            NodeKind::Unary { op, operand } => NodeKind::Unary { op: *op, operand: f(*operand) },
            NodeKind::Filter { seq, predicate } => NodeKind::Filter { seq: f(*seq), predicate: f(*predicate) },
            NodeKind::Map { seq, param, body } => NodeKind::Map { seq: f(*seq), param: f(*param), body: f(*body) },
            NodeKind::Aggregate { op, seq } => NodeKind::Aggregate { op: *op, seq: f(*seq) },
            NodeKind::Call { function, args } => {
                NodeKind::Call { function: function.clone(), args: args.iter().map(|a| f(*a)).collect() }
            }
            NodeKind::Param { binder, seq } => NodeKind::Param { binder: *binder, seq: f(*seq) },
            other => other.clone(),
        }
    }
}

/// Structural role of a node, known without a schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Origin {
    /// The event table itself.
    Events,
    /// Records of `collection`, nested `depth` levels below the current row.
    Records { collection: String, depth: u32 },
    /// Anything else: leaves, arithmetic, counts.
    Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Error)]
pub enum BuildError {
    #[error("function `{0}` is not declared")]
    UndeclaredFunction(String),
    #[error("function `{0}` is already declared with a different signature")]
    FunctionRedeclared(String),
    #[error("function `{name}` takes {expected} arguments, got {actual}")]
    Arity { name: String, expected: usize, actual: usize },
    #[error("alias `{name}` is already defined on {anchor}")]
    DuplicateAlias { anchor: String, name: String },
    #[error("alias cycle through `{0}`")]
    AliasCycle(String),
    #[error("aliases can only be anchored on the event table or a collection")]
    InvalidAnchor,
    #[error("parameter is referenced outside the function that binds it")]
    UnboundParam,
    #[error("expressions from different graphs cannot be combined")]
    ForeignGraph,
    #[error("constant {0} is not finite")]
    NonFiniteConstant(String),
    #[error("expressions have no roots")]
    NoRoots,
}

/// Signature of a backend-provided function.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FunctionSig {
    pub params: Vec<ElementKind>,
    pub ret: ElementKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnchorKey {
    Events,
    Collection(String),
}

impl fmt::Display for AnchorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnchorKey::Events => f.write_str("the event table"),
            AnchorKey::Collection(c) => write!(f, "collection {c}"),
        }
    }
}

/// Hash-consed node storage with origin tracking.
#[derive(Debug, Default, Clone)]
pub(crate) struct Arena {
    nodes: Vec<(NodeKind, Origin)>,
    index: HashMap<NodeKind, NodeId>,
}

impl Arena {
    pub(crate) fn push(&mut self, kind: NodeKind) -> NodeId {
        if let Some(id) = self.index.get(&kind) {
            return *id;
        }
        let origin = self.origin_for(&kind);
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push((kind.clone(), origin));
        self.index.insert(kind, id);
        id
    }

    pub(crate) fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id.index()].0
    }

    pub(crate) fn origin(&self, id: NodeId) -> &Origin {
        &self.nodes[id.index()].1
    }

    pub(crate) fn len(&self) -> usize {
        self.nodes.len()
    }

    pub(crate) fn into_nodes(self) -> Vec<(NodeKind, Origin)> {
        self.nodes
    }

    fn origin_for(&self, kind: &NodeKind) -> Origin {
        match kind {
            NodeKind::Source { .. } => Origin::Events,
            NodeKind::Attribute { parent, name } => match self.origin(*parent) {
                Origin::Events => Origin::Records { collection: name.clone(), depth: 1 },
                _ => Origin::Value,
            },
            NodeKind::Filter { seq, .. } => self.origin(*seq).clone(),
            NodeKind::Map { seq, body, .. } => match (self.origin(*seq), self.origin(*body)) {
                (Origin::Records { depth: ds, .. }, Origin::Records { collection, depth: db }) => {
                    Origin::Records { collection: collection.clone(), depth: ds + db }
                }
                _ => Origin::Value,
            },
            NodeKind::Aggregate { op: AggregateOp::First, seq } => match self.origin(*seq) {
                Origin::Records { collection, depth } if *depth >= 1 => {
                    Origin::Records { collection: collection.clone(), depth: depth - 1 }
                }
                _ => Origin::Value,
            },
            NodeKind::Param { seq, .. } => match self.origin(*seq) {
                Origin::Records { collection, .. } => Origin::Records { collection: collection.clone(), depth: 0 },
                _ => Origin::Value,
            },
            _ => Origin::Value,
        }
    }
}

type AliasFn = Rc<dyn Fn(&ExprHandle) -> ExprHandle>;

struct GraphInner {
    arena: RefCell<Arena>,
    next_binder: Cell<u32>,
    aliases: RefCell<BTreeMap<(AnchorKey, String), AliasFn>>,
    functions: RefCell<BTreeMap<String, FunctionSig>>,
    expanding: RefCell<Vec<(AnchorKey, String)>>,
}

/// A recording session. Every handle created from it shares its node arena,
/// alias table and function declarations.
#[derive(Clone)]
pub struct Graph {
    inner: Rc<GraphInner>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.inner.arena.borrow().len()).finish()
    }
}

/// A recorded expression.
#[derive(Clone)]
pub struct ExprHandle {
    graph: Graph,
    id: NodeId,
}

impl fmt::Debug for ExprHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExprHandle({} = {:?})", self.id, self.kind())
    }
}

/// Anything that can become an operand: handles and plain scalars.
pub trait IntoExpr {
    fn into_expr(self, graph: &Graph) -> ExprHandle;
}

impl IntoExpr for ExprHandle {
    fn into_expr(self, graph: &Graph) -> ExprHandle {
        if Rc::ptr_eq(&self.graph.inner, &graph.inner) {
            self
        } else {
            graph.invalid(BuildError::ForeignGraph)
        }
    }
}

impl IntoExpr for &ExprHandle {
    fn into_expr(self, graph: &Graph) -> ExprHandle {
        self.clone().into_expr(graph)
    }
}

impl IntoExpr for f64 {
    fn into_expr(self, graph: &Graph) -> ExprHandle {
        graph.constant(self)
    }
}

impl IntoExpr for i64 {
    fn into_expr(self, graph: &Graph) -> ExprHandle {
        graph.constant(self)
    }
}

impl IntoExpr for bool {
    fn into_expr(self, graph: &Graph) -> ExprHandle {
        graph.constant(self)
    }
}

impl IntoExpr for Scalar {
    fn into_expr(self, graph: &Graph) -> ExprHandle {
        graph.constant(self)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Lift {
    No,
    Const,
    Elem,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(GraphInner {
                arena: RefCell::new(Arena::default()),
                next_binder: Cell::new(0),
                aliases: RefCell::new(BTreeMap::new()),
                functions: RefCell::new(BTreeMap::new()),
                expanding: RefCell::new(Vec::new()),
            }),
        }
    }

    /// The root event table of a dataset.
    pub fn source(&self, dataset: &str) -> ExprHandle {
        self.handle(self.push(NodeKind::Source { dataset: dataset.to_string() }))
    }

    pub fn constant(&self, value: impl Into<Scalar>) -> ExprHandle {
        let value = value.into();
        if let Scalar::Float(v) = value {
            if !v.is_finite() {
                return self.invalid(BuildError::NonFiniteConstant(format!("{v}")));
            }
        }
        self.handle(self.push(NodeKind::Constant(value)))
    }

    /// Declares a function implemented by the backends.
    pub fn declare_function(&self, name: &str, params: &[ElementKind], ret: ElementKind) -> Result<(), BuildError> {
        let sig = FunctionSig { params: params.to_vec(), ret };
        let mut fns = self.inner.functions.borrow_mut();
        match fns.get(name) {
            Some(existing) if *existing != sig => Err(BuildError::FunctionRedeclared(name.to_string())),
            _ => {
                fns.insert(name.to_string(), sig);
                Ok(())
            }
        }
    }

    pub fn functions(&self) -> BTreeMap<String, FunctionSig> {
        self.inner.functions.borrow().clone()
    }

    /// Calls a declared backend function.
    pub fn call(&self, name: &str, args: &[&ExprHandle]) -> Result<ExprHandle, BuildError> {
        let sig = self
            .inner
            .functions
            .borrow()
            .get(name)
            .cloned()
            .ok_or_else(|| BuildError::UndeclaredFunction(name.to_string()))?;
        if sig.params.len() != args.len() {
            return Err(BuildError::Arity { name: name.to_string(), expected: sig.params.len(), actual: args.len() });
        }
        let args = args.iter().map(|a| (*a).into_expr(self).id).collect();
        Ok(self.handle(self.push(NodeKind::Call { function: name.to_string(), args })))
    }

    /// Defines `name` as a per-element computed column on the anchor's
    /// collection (or on the event table). `body` is recorded lazily, each
    /// time the alias is referenced.
    pub fn define_alias<F>(&self, anchor: &ExprHandle, name: &str, body: F) -> Result<(), BuildError>
    where
        F: Fn(&ExprHandle) -> ExprHandle + 'static,
    {
        let key = anchor_key(&anchor.origin()).ok_or(BuildError::InvalidAnchor)?;
        let mut aliases = self.inner.aliases.borrow_mut();
        let entry = (key, name.to_string());
        if aliases.contains_key(&entry) {
            return Err(BuildError::DuplicateAlias { anchor: entry.0.to_string(), name: name.to_string() });
        }
        aliases.insert(entry, Rc::new(body));
        Ok(())
    }

    /// Expression form: `anchor[name] = body`, where `body` is written in
    /// terms of `anchor` itself (e.g. `jets.pt / 1000`).
    pub fn define_alias_expr(&self, anchor: &ExprHandle, name: &str, body: &ExprHandle) -> Result<(), BuildError> {
        let anchor_id = anchor.id;
        let body_id = body.clone().into_expr(self).id;
        let graph = self.clone();
        self.define_alias(anchor, name, move |x| {
            let mut map = HashMap::from([(anchor_id, x.id)]);
            graph.handle(graph.substitute(body_id, &mut map))
        })
    }

    fn handle(&self, id: NodeId) -> ExprHandle {
        ExprHandle { graph: self.clone(), id }
    }

    fn invalid(&self, err: BuildError) -> ExprHandle {
        self.handle(self.push(NodeKind::Invalid(err)))
    }

    fn push(&self, kind: NodeKind) -> NodeId {
        self.inner.arena.borrow_mut().push(kind)
    }

    fn kind(&self, id: NodeId) -> NodeKind {
        self.inner.arena.borrow().kind(id).clone()
    }

    fn origin(&self, id: NodeId) -> Origin {
        self.inner.arena.borrow().origin(id).clone()
    }

    pub(crate) fn arena_snapshot(&self) -> std::cell::Ref<'_, Arena> {
        self.inner.arena.borrow()
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn fresh_binder(&self) -> u32 {
        let b = self.inner.next_binder.get();
        self.inner.next_binder.set(b + 1);
        b
    }

    fn map_node(&self, seq: NodeId, f: impl FnOnce(&ExprHandle) -> ExprHandle) -> NodeId {
        if matches!(self.origin(seq), Origin::Records { depth: 0, .. }) {
            return f(&self.handle(seq)).into_expr(self).id;
        }
        let param = self.push(NodeKind::Param { binder: self.fresh_binder(), seq });
        let body = f(&self.handle(param)).into_expr(self).id;
        self.finish_map(seq, param, body)
    }

    fn finish_map(&self, seq: NodeId, param: NodeId, body: NodeId) -> NodeId {
        if body == param {
            return seq;
        }
        let mut memo = HashMap::new();
        if self.lift_class(body, param, &mut memo) == Lift::Elem {
            let mut map = HashMap::from([(param, seq)]);
            return self.substitute(body, &mut map);
        }
        self.push(NodeKind::Map { seq, param, body })
    }

    /// Whether `node` is elementwise math over leaves of `param` only.
    fn lift_class(&self, node: NodeId, param: NodeId, memo: &mut HashMap<NodeId, Lift>) -> Lift {
        if node == param {
            return Lift::Elem;
        }
        if let Some(l) = memo.get(&node) {
            return *l;
        }
        let combine = |parts: Vec<Lift>| {
            if parts.contains(&Lift::No) {
                Lift::No
            } else if parts.contains(&Lift::Elem) {
                Lift::Elem
            } else {
                Lift::Const
            }
        };
        let out = match self.kind(node) {
            NodeKind::Constant(_) => Lift::Const,
            NodeKind::Attribute { parent, .. } => match self.lift_class(parent, param, memo) {
                Lift::Elem => Lift::Elem,
                _ => Lift::No,
            },
            NodeKind::Unary { operand, .. } => self.lift_class(operand, param, memo),
            NodeKind::Binary { left, right, .. } => {
                let parts = vec![self.lift_class(left, param, memo), self.lift_class(right, param, memo)];
                combine(parts)
            }
            NodeKind::Call { args, .. } => {
                let parts = args.iter().map(|a| self.lift_class(*a, param, memo)).collect();
                combine(parts)
            }
            _ => Lift::No,
        };
        memo.insert(node, out);
        out
    }

    /// Rebuilds `node` with the replacements in `map`, re-running the map
    /// smart constructor so substituted records re-lift.
    fn substitute(&self, node: NodeId, map: &mut HashMap<NodeId, NodeId>) -> NodeId {
        if let Some(n) = map.get(&node) {
            return *n;
        }
        let kind = self.kind(node);
        let out = match &kind {
            NodeKind::Map { seq, param, body } => {
                let new_seq = self.substitute(*seq, map);
                if new_seq == *seq && !self.mentions_any(*body, map) {
                    node
                } else {
                    let (param, body) = (*param, *body);
                    self.map_node(new_seq, |p| {
                        map.insert(param, p.id);
                        self.handle(self.substitute(body, map))
                    })
                }
            }
            NodeKind::Param { seq, .. } => {
                // A parameter of a binder outside the substituted region.
                let _ = seq;
                node
            }
            _ => {
                let rebuilt = kind.rewrite(|c| self.substitute(c, map));
                if rebuilt == kind {
                    node
                } else {
                    self.push(rebuilt)
                }
            }
        };
        map.insert(node, out);
        out
    }

    fn mentions_any(&self, node: NodeId, map: &HashMap<NodeId, NodeId>) -> bool {
        let mut stack = vec![node];
        let mut seen = std::collections::HashSet::new();
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            if map.get(&n).is_some_and(|m| *m != n) {
                return true;
            }
            let kind = self.kind(n);
            if let NodeKind::Map { param, .. } = &kind {
                stack.push(*param);
            }
            stack.extend(kind.inputs());
        }
        false
    }

    fn attr_node(&self, parent: NodeId, name: &str) -> NodeId {
        let origin = self.origin(parent);
        let key = match &origin {
            Origin::Events => Some(AnchorKey::Events),
            Origin::Records { collection, .. } => Some(AnchorKey::Collection(collection.clone())),
            Origin::Value => None,
        };
        let alias = key.as_ref().and_then(|k| self.inner.aliases.borrow().get(&(k.clone(), name.to_string())).cloned());
        let Some(alias) = alias else {
            return self.push(NodeKind::Attribute { parent, name: name.to_string() });
        };
        if let Origin::Records { depth, .. } = origin {
            if depth > 0 {
                return self.map_node(parent, |e| e.attr(name));
            }
        }
        let entry = (key.unwrap(), name.to_string());
        if self.inner.expanding.borrow().contains(&entry) {
            return self.push(NodeKind::Invalid(BuildError::AliasCycle(name.to_string())));
        }
        self.inner.expanding.borrow_mut().push(entry);
        let out = alias(&self.handle(parent)).into_expr(self).id;
        self.inner.expanding.borrow_mut().pop();
        out
    }
}

fn anchor_key(origin: &Origin) -> Option<AnchorKey> {
    match origin {
        Origin::Events => Some(AnchorKey::Events),
        Origin::Records { collection, .. } => Some(AnchorKey::Collection(collection.clone())),
        Origin::Value => None,
    }
}

impl ExprHandle {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn kind(&self) -> NodeKind {
        self.graph.kind(self.id)
    }

    pub fn origin(&self) -> Origin {
        self.graph.origin(self.id)
    }

    pub fn same_node(&self, other: &ExprHandle) -> bool {
        self.graph.same_graph(&other.graph) && self.id == other.id
    }

    /// Collection or leaf access; also resolves aliases.
    pub fn attr(&self, name: &str) -> ExprHandle {
        self.graph.handle(self.graph.attr_node(self.id, name))
    }

    /// String-keyed access, identical to [`ExprHandle::attr`].
    pub fn get(&self, name: &str) -> ExprHandle {
        self.attr(name)
    }

    fn binary(&self, op: BinaryOp, rhs: impl IntoExpr) -> ExprHandle {
        let rhs = rhs.into_expr(&self.graph);
        self.graph.handle(self.graph.push(NodeKind::Binary { op, left: self.id, right: rhs.id }))
    }

    fn unary(&self, op: UnaryOp) -> ExprHandle {
        self.graph.handle(self.graph.push(NodeKind::Unary { op, operand: self.id }))
    }

    pub fn gt(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::Gt, rhs)
    }

    pub fn lt(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::Lt, rhs)
    }

    pub fn ge(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::Ge, rhs)
    }

    pub fn le(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::Le, rhs)
    }

    pub fn equal(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::Eq, rhs)
    }

    pub fn not_equal(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::Ne, rhs)
    }

    pub fn and(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::And, rhs)
    }

    pub fn or(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::Or, rhs)
    }

    pub fn atan2(&self, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(BinaryOp::Atan2, rhs)
    }

    pub fn binary_op(&self, op: BinaryOp, rhs: impl IntoExpr) -> ExprHandle {
        self.binary(op, rhs)
    }

    pub fn unary_op(&self, op: UnaryOp) -> ExprHandle {
        self.unary(op)
    }

    pub fn abs(&self) -> ExprHandle {
        self.unary(UnaryOp::Abs)
    }

    pub fn sqrt(&self) -> ExprHandle {
        self.unary(UnaryOp::Sqrt)
    }

    pub fn sin(&self) -> ExprHandle {
        self.unary(UnaryOp::Sin)
    }

    pub fn cos(&self) -> ExprHandle {
        self.unary(UnaryOp::Cos)
    }

    /// Keeps elements where `predicate`, a Bool expression shaped like
    /// `self` (e.g. `eles.pt.gt(50000.0)`), is true.
    pub fn filter(&self, predicate: impl IntoExpr) -> ExprHandle {
        let predicate = predicate.into_expr(&self.graph);
        self.graph.handle(self.graph.push(NodeKind::Filter { seq: self.id, predicate: predicate.id }))
    }

    /// Keeps elements for which the per-element function returns true.
    pub fn filter_with(&self, f: impl FnOnce(&ExprHandle) -> ExprHandle) -> ExprHandle {
        let predicate = self.graph.map_node(self.id, f);
        self.graph.handle(self.graph.push(NodeKind::Filter { seq: self.id, predicate }))
    }

    /// Applies `f` to every innermost element. `f` may capture parameters of
    /// enclosing maps, which nests the result one level deeper.
    pub fn map(&self, f: impl FnOnce(&ExprHandle) -> ExprHandle) -> ExprHandle {
        self.graph.handle(self.graph.map_node(self.id, f))
    }

    pub fn aggregate(&self, op: AggregateOp) -> ExprHandle {
        self.graph.handle(self.graph.push(NodeKind::Aggregate { op, seq: self.id }))
    }

    pub fn count(&self) -> ExprHandle {
        self.aggregate(AggregateOp::Count)
    }

    pub fn first(&self) -> ExprHandle {
        self.aggregate(AggregateOp::First)
    }

    pub fn sum(&self) -> ExprHandle {
        self.aggregate(AggregateOp::Sum)
    }

    pub fn min(&self) -> ExprHandle {
        self.aggregate(AggregateOp::Min)
    }

    pub fn max(&self) -> ExprHandle {
        self.aggregate(AggregateOp::Max)
    }

    pub fn any(&self) -> ExprHandle {
        self.aggregate(AggregateOp::Any)
    }

    pub fn all(&self) -> ExprHandle {
        self.aggregate(AggregateOp::All)
    }
}

macro_rules! impl_op {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<T: IntoExpr> std::ops::$trait<T> for ExprHandle {
            type Output = ExprHandle;
            fn $method(self, rhs: T) -> ExprHandle {
                self.binary($op, rhs)
            }
        }
        impl<T: IntoExpr> std::ops::$trait<T> for &ExprHandle {
            type Output = ExprHandle;
            fn $method(self, rhs: T) -> ExprHandle {
                self.binary($op, rhs)
            }
        }
    };
}

impl_op!(Add, add, BinaryOp::Add);
impl_op!(Sub, sub, BinaryOp::Sub);
impl_op!(Mul, mul, BinaryOp::Mul);
impl_op!(Div, div, BinaryOp::Div);
impl_op!(BitAnd, bitand, BinaryOp::And);
impl_op!(BitOr, bitor, BinaryOp::Or);

impl std::ops::Neg for ExprHandle {
    type Output = ExprHandle;
    fn neg(self) -> ExprHandle {
        self.unary(UnaryOp::Neg)
    }
}

impl std::ops::Neg for &ExprHandle {
    type Output = ExprHandle;
    fn neg(self) -> ExprHandle {
        self.unary(UnaryOp::Neg)
    }
}

#[cfg(test)]
mod tests;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use super::{Arena, BuildError, ExprHandle, FunctionSig, NodeId, NodeKind, Origin};
use crate::jagged::Scalar;

/// Alias-substituted, parameter-resolved DAG with deterministic node order.
///
/// Nodes are stored in post-order of a depth-first walk from the roots, so
/// every node comes after its inputs. Parameters are named by lambda nesting
/// level. The same user program always yields the same [`CanonicalDag::dump`].
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalDag {
    nodes: Vec<(NodeKind, Origin)>,
    free: Vec<BTreeSet<u32>>,
    roots: Vec<NodeId>,
    functions: BTreeMap<String, FunctionSig>,
}

/// Canonicalizes one or more roots recorded in the same graph.
pub fn canonicalize(roots: &[&ExprHandle]) -> Result<CanonicalDag, BuildError> {
    let first = roots.first().ok_or(BuildError::NoRoots)?;
    let graph = first.graph();
    if roots.iter().any(|r| !graph.same_graph(r.graph())) {
        return Err(BuildError::ForeignGraph);
    }
    let arena = graph.arena_snapshot();
    let mut c = Canon { src: &arena, out: Arena::default(), memo: HashMap::new(), free: HashMap::new() };
    let mut out_roots = Vec::with_capacity(roots.len());
    for r in roots {
        out_roots.push(c.canon(r.id(), 0, &BTreeMap::new())?);
    }
    let (nodes, roots) = compact(c.out.into_nodes(), &out_roots);
    Ok(CanonicalDag::from_parts(nodes, roots, graph.functions()))
}

/// Drops nodes the roots cannot reach, such as the literal of an elided
/// `filter(true)`, and renumbers the rest in their original order.
fn compact(nodes: Vec<(NodeKind, Origin)>, roots: &[NodeId]) -> (Vec<(NodeKind, Origin)>, Vec<NodeId>) {
    let mut keep = vec![false; nodes.len()];
    let mut stack = roots.to_vec();
    while let Some(n) = stack.pop() {
        if std::mem::replace(&mut keep[n.index()], true) {
            continue;
        }
        let kind = &nodes[n.index()].0;
        match kind {
            NodeKind::Map { param, .. } => stack.push(*param),
            NodeKind::Param { seq, .. } => stack.push(*seq),
            _ => {}
        }
        stack.extend(kind.inputs());
    }
    let mut remap = vec![NodeId(u32::MAX); nodes.len()];
    let mut out = Vec::with_capacity(nodes.len());
    for (i, (kind, origin)) in nodes.into_iter().enumerate() {
        if keep[i] {
            remap[i] = NodeId(out.len() as u32);
            out.push((kind.rewrite(|c| remap[c.index()]), origin));
        }
    }
    (out, roots.iter().map(|r| remap[r.index()]).collect())
}

type Env = BTreeMap<u32, (u32, NodeId)>;

/// A source node, its lambda depth and the bindings of its free binders.
type MemoKey = (NodeId, u32, Vec<(u32, u32, NodeId)>);

struct Canon<'a> {
    src: &'a Arena,
    out: Arena,
    memo: HashMap<MemoKey, NodeId>,
    free: HashMap<NodeId, BTreeSet<u32>>,
}

impl Canon<'_> {
    fn free_binders(&mut self, n: NodeId) -> BTreeSet<u32> {
        if let Some(f) = self.free.get(&n) {
            return f.clone();
        }
        let kind = self.src.kind(n).clone();
        let out = match &kind {
            NodeKind::Param { binder, .. } => BTreeSet::from([*binder]),
            NodeKind::Map { seq, param, body } => {
                let mut s = self.free_binders(*seq);
                let mut b = self.free_binders(*body);
                if let NodeKind::Param { binder, .. } = self.src.kind(*param) {
                    b.remove(binder);
                }
                s.append(&mut b);
                s
            }
            k => {
                let mut s = BTreeSet::new();
                for i in k.inputs() {
                    s.extend(self.free_binders(i));
                }
                s
            }
        };
        self.free.insert(n, out.clone());
        out
    }

    fn canon(&mut self, n: NodeId, depth: u32, env: &Env) -> Result<NodeId, BuildError> {
        let free = self.free_binders(n);
        let key_env: Vec<(u32, u32, NodeId)> =
            free.iter().filter_map(|b| env.get(b).map(|(l, s)| (*b, *l, *s))).collect();
        let key = (n, depth, key_env);
        if let Some(id) = self.memo.get(&key) {
            return Ok(*id);
        }
        let kind = self.src.kind(n).clone();
        let out = match kind {
            NodeKind::Invalid(e) => return Err(e),
            NodeKind::Param { binder, .. } => {
                let (level, seq) = *env.get(&binder).ok_or(BuildError::UnboundParam)?;
                self.out.push(NodeKind::Param { binder: level, seq })
            }
            NodeKind::Attribute { parent, name } => {
                let p = self.canon(parent, depth, env)?;
                self.attr(p, &name)
            }
            NodeKind::Filter { seq, predicate } => {
                let s = self.canon(seq, depth, env)?;
                let p = self.canon(predicate, depth, env)?;
                if self.is_always_true(p) {
                    s
                } else {
                    self.out.push(NodeKind::Filter { seq: s, predicate: p })
                }
            }
            NodeKind::Map { seq, param, body } => {
                let s = self.canon(seq, depth, env)?;
                let NodeKind::Param { binder, .. } = self.src.kind(param).clone() else {
                    unreachable!("map parameter is not a Param node");
                };
                let mut inner = env.clone();
                inner.insert(binder, (depth, s));
                let b = self.canon(body, depth + 1, &inner)?;
                let p = self.out.push(NodeKind::Param { binder: depth, seq: s });
                if b == p {
                    s
                } else {
                    self.out.push(NodeKind::Map { seq: s, param: p, body: b })
                }
            }
            other => {
                let mut err = None;
                let rebuilt = other.rewrite(|c| match self.canon(c, depth, env) {
                    Ok(id) => id,
                    Err(e) => {
                        err.get_or_insert(e);
                        c
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                self.out.push(rebuilt)
            }
        };
        self.memo.insert(key, out);
        Ok(out)
    }

    /// Leaf access on filtered records becomes a filter of the leaf column,
    /// so the mask applies to exactly the data that is read.
    fn attr(&mut self, parent: NodeId, name: &str) -> NodeId {
        if let (NodeKind::Filter { seq, predicate }, Origin::Records { .. }) =
            (self.out.kind(parent).clone(), self.out.origin(parent))
        {
            let inner = self.attr(seq, name);
            return self.out.push(NodeKind::Filter { seq: inner, predicate });
        }
        self.out.push(NodeKind::Attribute { parent, name: name.to_string() })
    }

    fn is_always_true(&self, p: NodeId) -> bool {
        match self.out.kind(p) {
            NodeKind::Constant(Scalar::Bool(true)) => true,
            NodeKind::Map { body, .. } => matches!(self.out.kind(*body), NodeKind::Constant(Scalar::Bool(true))),
            _ => false,
        }
    }
}

impl CanonicalDag {
    fn from_parts(
        nodes: Vec<(NodeKind, Origin)>,
        roots: Vec<NodeId>,
        functions: BTreeMap<String, FunctionSig>,
    ) -> Self {
        let mut free: Vec<BTreeSet<u32>> = Vec::with_capacity(nodes.len());
        for (kind, _) in &nodes {
            let f = match kind {
                NodeKind::Param { binder, .. } => BTreeSet::from([*binder]),
                NodeKind::Map { seq, param, body } => {
                    let mut s = free[seq.index()].clone();
                    let mut b = free[body.index()].clone();
                    if let NodeKind::Param { binder, .. } = &nodes[param.index()].0 {
                        b.remove(binder);
                    }
                    s.append(&mut b);
                    s
                }
                k => k.inputs().iter().flat_map(|i| free[i.index()].iter().copied()).collect(),
            };
            free.push(f);
        }
        CanonicalDag { nodes, free, roots, functions }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn kind(&self, id: NodeId) -> &NodeKind {
        &self.nodes[id.index()].0
    }

    pub fn origin(&self, id: NodeId) -> &Origin {
        &self.nodes[id.index()].1
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn functions(&self) -> &BTreeMap<String, FunctionSig> {
        &self.functions
    }

    /// Nesting levels of the parameters `id` depends on without binding them.
    pub fn free_levels(&self, id: NodeId) -> &BTreeSet<u32> {
        &self.free[id.index()]
    }

    /// A node is closed when it depends on no enclosing parameter; only
    /// closed nodes are planned and materialized.
    pub fn is_closed(&self, id: NodeId) -> bool {
        self.free[id.index()].is_empty()
    }

    /// Datasets named by `Source` nodes.
    pub fn datasets(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .filter_map(|(k, _)| match k {
                NodeKind::Source { dataset } => Some(dataset.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Closed nodes whose values a closed node consumes. For a `Map` this
    /// includes closed nodes captured inside its body.
    pub fn closed_inputs(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = BTreeSet::new();
        match self.kind(id) {
            NodeKind::Map { seq, body, .. } => {
                out.insert(*seq);
                let mut stack = vec![*body];
                let mut seen = BTreeSet::new();
                while let Some(n) = stack.pop() {
                    if !seen.insert(n) {
                        continue;
                    }
                    if self.is_closed(n) {
                        out.insert(n);
                    } else {
                        stack.extend(self.kind(n).inputs());
                    }
                }
            }
            k => out.extend(k.inputs()),
        }
        out.into_iter().collect()
    }

    /// Nodes reachable from `roots` (inclusive), body nodes included.
    pub fn reachable(&self, roots: &[NodeId]) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = roots.to_vec();
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            if let NodeKind::Map { param, .. } = self.kind(n) {
                stack.push(*param);
            }
            if let NodeKind::Param { seq, .. } = self.kind(n) {
                stack.push(*seq);
            }
            stack.extend(self.kind(n).inputs());
        }
        seen
    }

    /// Short label in the style of a drawn expression tree.
    pub fn label(&self, id: NodeId) -> String {
        match self.kind(id) {
            NodeKind::Source { dataset } => format!("Source({dataset})"),
            NodeKind::Attribute { name, .. } => format!(".{name}"),
            NodeKind::Binary { op, .. } => match op {
                crate::ops::BinaryOp::And => "&".into(),
                crate::ops::BinaryOp::Or => "|".into(),
                op => op.symbol().to_string(),
            },
            NodeKind::Unary { op, .. } => match op {
                crate::ops::UnaryOp::Neg => "neg".into(),
                op => op.function_name().to_lowercase(),
            },
            NodeKind::Filter { .. } => "filter[]".into(),
            NodeKind::Map { param, .. } => format!("map({})", self.label(*param)),
            NodeKind::Aggregate { op, .. } => format!("{op}()"),
            NodeKind::Call { function, .. } => format!("{function}()"),
            NodeKind::Constant(v) => v.to_string(),
            NodeKind::Param { binder, .. } => format!("p{binder}"),
            NodeKind::Invalid(e) => format!("invalid({e})"),
        }
    }

    /// Deterministic text form; byte-identical for equal programs.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (name, sig) in &self.functions {
            let params: Vec<&str> = sig.params.iter().map(|k| k.name()).collect();
            let _ = writeln!(s, "fn {name}({}) -> {}", params.join(", "), sig.ret);
        }
        for id in self.ids() {
            let body = match self.kind(id) {
                NodeKind::Source { dataset } => format!("Source({dataset:?})"),
                NodeKind::Attribute { parent, name } => format!("Attr({parent}, {name:?})"),
                NodeKind::Binary { op, left, right } => format!("Binary({op:?}, {left}, {right})"),
                NodeKind::Unary { op, operand } => format!("Unary({op:?}, {operand})"),
                NodeKind::Filter { seq, predicate } => format!("Filter({seq}, {predicate})"),
                NodeKind::Map { seq, param, body } => format!("Map({seq}, {param}, {body})"),
                NodeKind::Aggregate { op, seq } => format!("Aggregate({op}, {seq})"),
                NodeKind::Call { function, args } => {
                    let a: Vec<String> = args.iter().map(|x| x.to_string()).collect();
                    format!("Call({function}, {})", a.join(", "))
                }
                NodeKind::Constant(v) => format!("Const({v:?})"),
                NodeKind::Param { binder, seq } => format!("Param(p{binder}, {seq})"),
                NodeKind::Invalid(e) => format!("Invalid({e})"),
            };
            let _ = writeln!(s, "{id} = {body}");
        }
        let roots: Vec<String> = self.roots.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(s, "roots {}", roots.join(" "));
        s
    }
}

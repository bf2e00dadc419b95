//! Dataset schemas and shape/kind inference over canonical DAGs.
//!
//! Schema files hold one block per collection:
//!
//! ```text
//! # comments run to end of line
//! collection Electrons { pt: float; eta: float; phi: float }
//! collection TruthParticles { pdgId: int; pt: float; eta: float; phi: float }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::expr::{CanonicalDag, NodeId, NodeKind};
use crate::jagged::{binary_result_kind, ElementKind};
use crate::ops::AggregateOp;

/// The schema used by the bundled generator: pt in MeV, angles in radians.
pub const DEFAULT_SCHEMA: &str = "\
# Synthetic xAOD-like event model. pt is stored in MeV.
collection Electrons { pt: float; eta: float; phi: float }
collection Jets { pt: float; eta: float; phi: float; isGood: bool }
collection TruthParticles { pdgId: int; pt: float; eta: float; phi: float }
";

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("reading schema {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSchema {
    collections: BTreeMap<String, BTreeMap<String, ElementKind>>,
}

impl DatasetSchema {
    pub fn default_model() -> Self {
        DatasetSchema::parse(DEFAULT_SCHEMA).expect("built-in schema parses")
    }

    pub fn from_file(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SchemaError::Io { path: path.display().to_string(), source })?;
        DatasetSchema::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let mut tokens = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            let mut word = String::new();
            for ch in line.chars() {
                if ch.is_alphanumeric() || ch == '_' {
                    word.push(ch);
                    continue;
                }
                if !word.is_empty() {
                    tokens.push((i + 1, std::mem::take(&mut word)));
                }
                match ch {
                    '{' | '}' | ':' | ';' => tokens.push((i + 1, ch.to_string())),
                    c if c.is_whitespace() => {}
                    c => return Err(SchemaError::Parse { line: i + 1, msg: format!("unexpected character {c:?}") }),
                }
            }
            if !word.is_empty() {
                tokens.push((i + 1, word));
            }
        }
        let mut schema = DatasetSchema::default();
        let mut it = tokens.into_iter().peekable();
        let err = |line: usize, msg: String| SchemaError::Parse { line, msg };
        while let Some((line, tok)) = it.next() {
            if tok != "collection" {
                return Err(err(line, format!("expected `collection`, found `{tok}`")));
            }
            let (line, name) = it.next().ok_or_else(|| err(line, "missing collection name".into()))?;
            if schema.collections.contains_key(&name) {
                return Err(err(line, format!("duplicate collection `{name}`")));
            }
            match it.next() {
                Some((_, t)) if t == "{" => {}
                _ => return Err(err(line, format!("expected `{{` after `{name}`"))),
            }
            let mut leaves = BTreeMap::new();
            loop {
                let (line, tok) = it.next().ok_or_else(|| err(line, format!("unterminated collection `{name}`")))?;
                match tok.as_str() {
                    "}" => break,
                    ";" => continue,
                    _ => {}
                }
                match it.next() {
                    Some((_, t)) if t == ":" => {}
                    _ => return Err(err(line, format!("expected `:` after leaf `{tok}`"))),
                }
                let (line, kind) = it.next().ok_or_else(|| err(line, format!("missing kind for `{tok}`")))?;
                let kind = match kind.as_str() {
                    "float" => ElementKind::Float,
                    "int" => ElementKind::Int,
                    "bool" => ElementKind::Bool,
                    other => return Err(err(line, format!("unknown kind `{other}`"))),
                };
                if leaves.insert(tok.clone(), kind).is_some() {
                    return Err(err(line, format!("duplicate leaf `{tok}` in `{name}`")));
                }
            }
            if leaves.is_empty() {
                return Err(err(line, format!("collection `{name}` has no leaves")));
            }
            schema.collections.insert(name, leaves);
        }
        Ok(schema)
    }

    pub fn collections(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, ElementKind>)> {
        self.collections.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn collection(&self, name: &str) -> Option<&BTreeMap<String, ElementKind>> {
        self.collections.get(name)
    }

    pub fn leaf(&self, collection: &str, leaf: &str) -> Option<ElementKind> {
        self.collections.get(collection)?.get(leaf).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, leaves) in &self.collections {
            let fields: Vec<String> = leaves.iter().map(|(l, k)| format!("{l}: {k}")).collect();
            s.push_str(&format!("collection {name} {{ {} }}\n", fields.join("; ")));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Events,
    Record(String),
    Prim(ElementKind),
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeKind::Events => f.write_str("events"),
            ShapeKind::Record(c) => write!(f, "record<{c}>"),
            ShapeKind::Prim(k) => write!(f, "{k}"),
        }
    }
}

/// Inferred type of one node.
///
/// `depth` counts list levels below the row of the node's evaluation frame:
/// per event for closed nodes, per bound element inside a map body.
/// `scalar` marks constant expressions, which broadcast against anything.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataShape {
    pub depth: u32,
    pub kind: ShapeKind,
    pub origin: Option<String>,
    pub scalar: bool,
}

impl DataShape {
    fn prim(kind: ElementKind, depth: u32, origin: Option<String>) -> Self {
        DataShape { depth, kind: ShapeKind::Prim(kind), origin, scalar: false }
    }

    pub fn element_kind(&self) -> Option<ElementKind> {
        match self.kind {
            ShapeKind::Prim(k) => Some(k),
            _ => None,
        }
    }

    pub fn origin_name(&self) -> &str {
        self.origin.as_deref().unwrap_or("derived")
    }
}

impl fmt::Display for DataShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scalar {
            write!(f, "scalar {}", self.kind)
        } else {
            write!(f, "depth {} {}", self.depth, self.kind)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("{node}: unknown collection `{name}`")]
    UnknownCollection { node: NodeId, name: String },
    #[error("{node}: collection `{collection}` has no leaf `{leaf}`")]
    UnknownLeaf { node: NodeId, collection: String, leaf: String },
    #[error("{node}: filter predicate must be bool, found {found}")]
    PredicateNotBool { node: NodeId, found: String },
    #[error("{node}: {msg}")]
    Kind { node: NodeId, msg: String },
    #[error("{node}: {msg}")]
    Depth { node: NodeId, msg: String },
    #[error("{node}: function `{name}` is not declared")]
    UndeclaredFunction { node: NodeId, name: String },
}

/// Shapes for every node of a canonical DAG plus non-fatal warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMap {
    shapes: Vec<DataShape>,
    pub warnings: Vec<String>,
}

impl ShapeMap {
    pub fn get(&self, id: NodeId) -> &DataShape {
        &self.shapes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

/// Annotates every node. In strict mode unknown leaves are errors; otherwise
/// they are assumed to be floats and a warning is recorded.
pub fn infer(dag: &CanonicalDag, schema: &DatasetSchema, strict: bool) -> Result<ShapeMap, TypeError> {
    let mut shapes: Vec<DataShape> = Vec::with_capacity(dag.len());
    let mut warnings = BTreeSet::new();
    for id in dag.ids() {
        let shape = infer_node(dag, schema, strict, id, &shapes, &mut warnings)?;
        shapes.push(shape);
    }
    Ok(ShapeMap { shapes, warnings: warnings.into_iter().collect() })
}

fn infer_node(
    dag: &CanonicalDag,
    schema: &DatasetSchema,
    strict: bool,
    id: NodeId,
    shapes: &[DataShape],
    warnings: &mut BTreeSet<String>,
) -> Result<DataShape, TypeError> {
    let s = |n: &NodeId| &shapes[n.index()];
    let kind_err = |msg: String| TypeError::Kind { node: id, msg };
    let depth_err = |msg: String| TypeError::Depth { node: id, msg };
    let need_sequence = |x: &DataShape, what: &str| {
        if x.scalar || x.depth == 0 {
            Err(TypeError::Depth { node: id, msg: format!("{what} needs a list, found {x}") })
        } else {
            Ok(())
        }
    };
    Ok(match dag.kind(id) {
        NodeKind::Source { .. } => DataShape { depth: 0, kind: ShapeKind::Events, origin: None, scalar: false },
        NodeKind::Constant(v) => DataShape { depth: 0, kind: ShapeKind::Prim(v.kind()), origin: None, scalar: true },
        NodeKind::Param { seq, .. } => {
            let seq = s(seq);
            match &seq.kind {
                ShapeKind::Events => return Err(depth_err("cannot bind a parameter to the event table".into())),
                k => DataShape { depth: 0, kind: k.clone(), origin: seq.origin.clone(), scalar: false },
            }
        }
        NodeKind::Attribute { parent, name } => {
            let p = s(parent);
            match &p.kind {
                ShapeKind::Events => {
                    if schema.collection(name).is_none() {
                        return Err(TypeError::UnknownCollection { node: id, name: name.clone() });
                    }
                    DataShape {
                        depth: 1,
                        kind: ShapeKind::Record(name.clone()),
                        origin: Some(name.clone()),
                        scalar: false,
                    }
                }
                ShapeKind::Record(c) => {
                    let kind = match schema.leaf(c, name) {
                        Some(k) => k,
                        None if strict => {
                            return Err(TypeError::UnknownLeaf { node: id, collection: c.clone(), leaf: name.clone() })
                        }
                        None => {
                            warnings.insert(format!("leaf `{c}.{name}` is not in the schema; assuming float"));
                            ElementKind::Float
                        }
                    };
                    DataShape::prim(kind, p.depth, Some(c.clone()))
                }
                ShapeKind::Prim(k) => return Err(kind_err(format!("attribute `{name}` on a {k} value"))),
            }
        }
        NodeKind::Unary { op, operand } => {
            let x = s(operand);
            match x.element_kind() {
                Some(k) if k.is_numeric() => DataShape { kind: ShapeKind::Prim(ElementKind::Float), ..x.clone() },
                _ => return Err(kind_err(format!("{op} needs a number, found {}", x.kind))),
            }
        }
        NodeKind::Binary { op, left, right } => {
            let (l, r) = (s(left), s(right));
            let (Some(lk), Some(rk)) = (l.element_kind(), r.element_kind()) else {
                return Err(kind_err(format!("`{op}` on {} and {}", l.kind, r.kind)));
            };
            let out = binary_result_kind(*op, lk, rk).ok_or_else(|| kind_err(format!("`{op}` on {lk} and {rk}")))?;
            let (depth, scalar) = combine_depths(id, &[l, r])?;
            let origin = if l.origin == r.origin { l.origin.clone() } else { None };
            DataShape { depth, kind: ShapeKind::Prim(out), origin, scalar }
        }
        NodeKind::Call { function, args } => {
            let sig = dag
                .functions()
                .get(function)
                .ok_or_else(|| TypeError::UndeclaredFunction { node: id, name: function.clone() })?;
            if sig.params.len() != args.len() {
                return Err(kind_err(format!("`{function}` takes {} arguments", sig.params.len())));
            }
            let arg_shapes: Vec<&DataShape> = args.iter().map(s).collect();
            for (want, got) in sig.params.iter().zip(&arg_shapes) {
                let ok = match (want, got.element_kind()) {
                    (ElementKind::Float, Some(k)) => k.is_numeric(),
                    (w, Some(k)) => *w == k,
                    (_, None) => false,
                };
                if !ok {
                    return Err(kind_err(format!("`{function}` expects {want}, found {}", got.kind)));
                }
            }
            let (depth, scalar) = combine_depths(id, &arg_shapes)?;
            DataShape { depth, kind: ShapeKind::Prim(sig.ret), origin: None, scalar }
        }
        NodeKind::Filter { seq, predicate } => {
            let (x, p) = (s(seq), s(predicate));
            need_sequence(x, "filter")?;
            if x.kind == ShapeKind::Events {
                return Err(depth_err("cannot filter the event table".into()));
            }
            if p.element_kind() != Some(ElementKind::Bool) {
                return Err(TypeError::PredicateNotBool { node: id, found: p.kind.to_string() });
            }
            if !p.scalar && p.depth != x.depth {
                return Err(depth_err(format!(
                    "predicate depth {} does not match sequence depth {}",
                    p.depth, x.depth
                )));
            }
            x.clone()
        }
        NodeKind::Map { seq, body, .. } => {
            let (x, b) = (s(seq), s(body));
            need_sequence(x, "map")?;
            DataShape { depth: x.depth + b.depth, kind: b.kind.clone(), origin: b.origin.clone(), scalar: false }
        }
        NodeKind::Aggregate { op, seq } => {
            let x = s(seq);
            need_sequence(x, op.name())?;
            let kind = match (op, &x.kind) {
                (AggregateOp::Count, _) => ShapeKind::Prim(ElementKind::Int),
                (AggregateOp::First, k @ (ShapeKind::Record(_) | ShapeKind::Prim(_))) => k.clone(),
                (AggregateOp::Sum | AggregateOp::Min | AggregateOp::Max, ShapeKind::Prim(k)) if k.is_numeric() => {
                    ShapeKind::Prim(*k)
                }
                (AggregateOp::Any | AggregateOp::All, ShapeKind::Prim(ElementKind::Bool)) => {
                    ShapeKind::Prim(ElementKind::Bool)
                }
                (op, k) => return Err(kind_err(format!("{op} on {k}"))),
            };
            let origin = if *op == AggregateOp::Count { None } else { x.origin.clone() };
            DataShape { depth: x.depth - 1, kind, origin, scalar: false }
        }
        NodeKind::Invalid(e) => return Err(kind_err(e.to_string())),
    })
}

fn combine_depths(node: NodeId, parts: &[&DataShape]) -> Result<(u32, bool), TypeError> {
    let arrays: Vec<u32> = parts.iter().filter(|p| !p.scalar).map(|p| p.depth).collect();
    match arrays.first() {
        None => Ok((0, true)),
        Some(&d) if arrays.iter().all(|&x| x == d) => Ok((d, false)),
        Some(_) => Err(TypeError::Depth { node, msg: format!("operand depths differ: {arrays:?}") }),
    }
}

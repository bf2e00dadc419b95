//! Immutable jagged arrays and the kernels shared by every executor.
//!
//! A [`JaggedArray`] stores per-event variable-length data as one offset
//! sequence per nesting level plus a flat value buffer. Depth 0 is a flat
//! column with one value per row. All kernels act on the innermost axis.

use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::ops::{AggregateOp, BinaryOp, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementKind {
    Float,
    Int,
    Bool,
}

impl ElementKind {
    pub fn name(self) -> &'static str {
        match self {
            ElementKind::Float => "float",
            ElementKind::Int => "int",
            ElementKind::Bool => "bool",
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, ElementKind::Bool)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single primitive value.
#[derive(Debug, Clone, Copy)]
pub enum Scalar {
    Float(f64),
    Int(i64),
    Bool(bool),
}

impl Scalar {
    pub fn kind(&self) -> ElementKind {
        match self {
            Scalar::Float(_) => ElementKind::Float,
            Scalar::Int(_) => ElementKind::Int,
            Scalar::Bool(_) => ElementKind::Bool,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Scalar::Float(v) => Some(v),
            Scalar::Int(v) => Some(v as f64),
            Scalar::Bool(_) => None,
        }
    }
}

// Bitwise identity: NaN equals itself and 0.0 differs from -0.0, which is
// what hash-consing constants needs.
impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Float(a), Scalar::Float(b)) => a.to_bits() == b.to_bits(),
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Scalar {}

impl Hash for Scalar {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Scalar::Float(v) => (0u8, v.to_bits()).hash(state),
            Scalar::Int(v) => (1u8, *v).hash(state),
            Scalar::Bool(v) => (2u8, *v).hash(state),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Float(v) => write!(f, "{v:?}"),
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Bool(v) => write!(f, "{v}"),
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float(v)
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

/// Flat value buffer, one kind per array.
#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    Float(Vec<f64>),
    Int(Vec<i64>),
    Bool(Vec<bool>),
}

impl Values {
    pub fn empty(kind: ElementKind) -> Values {
        match kind {
            ElementKind::Float => Values::Float(Vec::new()),
            ElementKind::Int => Values::Int(Vec::new()),
            ElementKind::Bool => Values::Bool(Vec::new()),
        }
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            Values::Float(_) => ElementKind::Float,
            Values::Int(_) => ElementKind::Int,
            Values::Bool(_) => ElementKind::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Values::Float(v) => v.len(),
            Values::Int(v) => v.len(),
            Values::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Scalar {
        match self {
            Values::Float(v) => Scalar::Float(v[i]),
            Values::Int(v) => Scalar::Int(v[i]),
            Values::Bool(v) => Scalar::Bool(v[i]),
        }
    }

    /// Gathers the values at `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> Values {
        match self {
            Values::Float(v) => Values::Float(indices.iter().map(|&i| v[i]).collect()),
            Values::Int(v) => Values::Int(indices.iter().map(|&i| v[i]).collect()),
            Values::Bool(v) => Values::Bool(indices.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn filled(kind_of: Scalar, n: usize) -> Values {
        match kind_of {
            Scalar::Float(v) => Values::Float(vec![v; n]),
            Scalar::Int(v) => Values::Int(vec![v; n]),
            Scalar::Bool(v) => Values::Bool(vec![v; n]),
        }
    }

    pub fn from_scalars(kind: ElementKind, items: impl IntoIterator<Item = Scalar>) -> Values {
        let mut out = Values::empty(kind);
        for s in items {
            match (&mut out, s) {
                (Values::Float(v), Scalar::Float(x)) => v.push(x),
                (Values::Int(v), Scalar::Int(x)) => v.push(x),
                (Values::Bool(v), Scalar::Bool(x)) => v.push(x),
                _ => unreachable!("mixed kinds in value buffer"),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JaggedError {
    #[error("invalid offsets: {0}")]
    InvalidOffsets(String),
    #[error("shape mismatch in {op}: operands have different list structure")]
    ShapeMismatch { op: String },
    #[error("kind mismatch in {op}: cannot apply to {kinds}")]
    KindMismatch { op: String, kinds: String },
    #[error("{op} on an empty list in row {row}")]
    EmptySequence { op: String, row: usize },
    #[error("{op} requires depth >= {required}, got {actual}")]
    DepthTooSmall { op: String, required: usize, actual: usize },
}

/// Offsets-plus-values representation of nested per-row lists.
///
/// Invariants are checked by [`JaggedArray::new`]: every offset level starts
/// at 0, is nondecreasing, and ends at the length of the next level (or of
/// the value buffer for the innermost level).
#[derive(Debug, Clone, PartialEq)]
pub struct JaggedArray {
    offsets: Vec<Vec<usize>>,
    values: Values,
}

impl JaggedArray {
    pub fn new(offsets: Vec<Vec<usize>>, values: Values) -> Result<Self, JaggedError> {
        for (level, offs) in offsets.iter().enumerate() {
            if offs.first() != Some(&0) {
                return Err(JaggedError::InvalidOffsets(format!("level {level} does not start at 0")));
            }
            if offs.windows(2).any(|w| w[0] > w[1]) {
                return Err(JaggedError::InvalidOffsets(format!("level {level} is decreasing")));
            }
            let next_len = match offsets.get(level + 1) {
                Some(next) => next.len() - 1,
                None => values.len(),
            };
            if *offs.last().unwrap() != next_len {
                return Err(JaggedError::InvalidOffsets(format!(
                    "level {level} ends at {} but the next level has {next_len} entries",
                    offs.last().unwrap()
                )));
            }
        }
        Ok(JaggedArray { offsets, values })
    }

    /// A depth-0 column.
    pub fn flat(values: Values) -> Self {
        JaggedArray { offsets: Vec::new(), values }
    }

    /// Builds a depth-1 array from per-row lists.
    pub fn from_rows<T: Clone>(rows: &[Vec<T>]) -> Self
    where
        Values: From<Vec<T>>,
    {
        let mut offs = Vec::with_capacity(rows.len() + 1);
        offs.push(0);
        let mut flat = Vec::new();
        for r in rows {
            flat.extend(r.iter().cloned());
            offs.push(flat.len());
        }
        JaggedArray { offsets: vec![offs], values: Values::from(flat) }
    }

    pub fn filled(rows: usize, value: Scalar) -> Self {
        JaggedArray::flat(Values::filled(value, rows))
    }

    pub fn depth(&self) -> usize {
        self.offsets.len()
    }

    pub fn kind(&self) -> ElementKind {
        self.values.kind()
    }

    pub fn offsets(&self) -> &[Vec<usize>] {
        &self.offsets
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn into_parts(self) -> (Vec<Vec<usize>>, Values) {
        (self.offsets, self.values)
    }

    /// Number of outermost rows.
    pub fn rows(&self) -> usize {
        match self.offsets.first() {
            Some(o) => o.len() - 1,
            None => self.values.len(),
        }
    }

    /// Adds `outer` levels on top of this array's levels. The last outer level
    /// must end at this array's row count.
    pub fn nest_under(self, outer: &[Vec<usize>]) -> Result<Self, JaggedError> {
        let mut offsets = outer.to_vec();
        offsets.extend(self.offsets);
        JaggedArray::new(offsets, self.values)
    }

    /// Row `j` of the result is row `rows[j]` of `self`.
    pub fn take(&self, rows: &[usize]) -> JaggedArray {
        let mut idx: Vec<usize> = rows.to_vec();
        let mut offsets = Vec::with_capacity(self.depth());
        for offs in &self.offsets {
            let mut level = Vec::with_capacity(idx.len() + 1);
            level.push(0);
            let mut next = Vec::new();
            for &i in &idx {
                next.extend(offs[i]..offs[i + 1]);
                level.push(next.len());
            }
            offsets.push(level);
            idx = next;
        }
        JaggedArray { offsets, values: self.values.gather(&idx) }
    }

    /// Maps every innermost element to the outermost row that contains it.
    pub fn innermost_rows(&self) -> Vec<usize> {
        innermost_rows(&self.offsets, self.rows())
    }

    /// Maps an index at `level` (0 = rows) back to its outermost row.
    fn row_of(&self, level: usize, mut index: usize) -> usize {
        for l in (0..level).rev() {
            let offs = &self.offsets[l];
            index = offs.partition_point(|&o| o <= index) - 1;
        }
        index
    }

    /// Converts to a nested tree for display and comparisons.
    pub fn to_nested(&self) -> Vec<Nested> {
        fn build(arr: &JaggedArray, level: usize, start: usize, end: usize) -> Vec<Nested> {
            if level == arr.depth() {
                (start..end).map(|i| Nested::Leaf(arr.values.get(i))).collect()
            } else {
                let offs = &arr.offsets[level];
                (start..end).map(|i| Nested::List(build(arr, level + 1, offs[i], offs[i + 1]))).collect()
            }
        }
        build(self, 0, 0, self.rows())
    }

    /// Builds an array from a nested tree whose leaves sit at exactly `depth`
    /// levels below each row. Used by the oracle and by tests.
    pub fn from_nested(rows: &[Nested], depth: usize, kind: ElementKind) -> Result<Self, JaggedError> {
        let mut offsets = vec![vec![0usize]; depth];
        let mut values = Vec::new();
        fn walk(
            n: &Nested,
            level: usize,
            depth: usize,
            offsets: &mut [Vec<usize>],
            values: &mut Vec<Scalar>,
        ) -> Result<(), JaggedError> {
            match (n, level == depth) {
                (Nested::Leaf(s), true) => {
                    values.push(*s);
                    Ok(())
                }
                (Nested::List(items), false) => {
                    for it in items {
                        walk(it, level + 1, depth, offsets, values)?;
                    }
                    let next_len = if level + 1 == depth { values.len() } else { offsets[level + 1].len() - 1 };
                    offsets[level].push(next_len);
                    Ok(())
                }
                _ => Err(JaggedError::InvalidOffsets("nested tree depth is ragged".into())),
            }
        }
        for r in rows {
            walk(r, 0, depth, &mut offsets, &mut values)?;
        }
        if values.iter().any(|v| v.kind() != kind) {
            return Err(JaggedError::KindMismatch { op: "from_nested".into(), kinds: kind.to_string() });
        }
        JaggedArray::new(offsets, Values::from_scalars(kind, values))
    }

    /// All values in row-major order, ignoring structure.
    pub fn flatten_f64(&self) -> Vec<f64> {
        match &self.values {
            Values::Float(v) => v.clone(),
            Values::Int(v) => v.iter().map(|&x| x as f64).collect(),
            Values::Bool(v) => v.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect(),
        }
    }

    fn same_structure(&self, other: &JaggedArray) -> bool {
        self.offsets == other.offsets && self.rows() == other.rows()
    }
}

impl From<Vec<f64>> for Values {
    fn from(v: Vec<f64>) -> Self {
        Values::Float(v)
    }
}

impl From<Vec<i64>> for Values {
    fn from(v: Vec<i64>) -> Self {
        Values::Int(v)
    }
}

impl From<Vec<bool>> for Values {
    fn from(v: Vec<bool>) -> Self {
        Values::Bool(v)
    }
}

/// Tree form of one row of a jagged array.
#[derive(Debug, Clone, PartialEq)]
pub enum Nested {
    Leaf(Scalar),
    List(Vec<Nested>),
}

/// For offset levels describing `rows` rows, returns the row of every
/// innermost element.
pub fn innermost_rows(offsets: &[Vec<usize>], rows: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..rows).collect();
    for offs in offsets {
        let mut next = Vec::with_capacity(*offs.last().unwrap_or(&0));
        for (i, w) in offs.windows(2).enumerate() {
            next.extend(std::iter::repeat_n(parent[i], w[1] - w[0]));
        }
        parent = next;
    }
    parent
}

/// Either side of an elementwise binary operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Array(&'a JaggedArray),
    Scalar(Scalar),
}

impl Operand<'_> {
    fn kind(&self) -> ElementKind {
        match self {
            Operand::Array(a) => a.kind(),
            Operand::Scalar(s) => s.kind(),
        }
    }

    fn get(&self, i: usize) -> Scalar {
        match self {
            Operand::Array(a) => a.values.get(i),
            Operand::Scalar(s) => *s,
        }
    }
}

fn f64_of(s: Scalar) -> f64 {
    match s {
        Scalar::Float(v) => v,
        Scalar::Int(v) => v as f64,
        Scalar::Bool(_) => unreachable!("bool reached numeric path"),
    }
}

fn int_of(s: Scalar) -> i64 {
    match s {
        Scalar::Int(v) => v,
        _ => unreachable!("non-int reached integer path"),
    }
}

fn bool_of(s: Scalar) -> bool {
    match s {
        Scalar::Bool(v) => v,
        _ => unreachable!("non-bool reached logical path"),
    }
}

/// Result kind of `op` applied to operands of the given kinds, or `None`
/// when the combination is illegal.
pub fn binary_result_kind(op: BinaryOp, l: ElementKind, r: ElementKind) -> Option<ElementKind> {
    use ElementKind::*;
    match op {
        BinaryOp::And | BinaryOp::Or => (l == Bool && r == Bool).then_some(Bool),
        BinaryOp::Eq | BinaryOp::Ne => ((l == Bool) == (r == Bool)).then_some(Bool),
        BinaryOp::Lt | BinaryOp::Gt | BinaryOp::Le | BinaryOp::Ge => (l.is_numeric() && r.is_numeric()).then_some(Bool),
        BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul => match (l, r) {
            (Int, Int) => Some(Int),
            (Bool, _) | (_, Bool) => None,
            _ => Some(Float),
        },
        BinaryOp::Div | BinaryOp::Atan2 => (l.is_numeric() && r.is_numeric()).then_some(Float),
    }
}

/// Applies `op` to one pair of scalars whose kinds already passed
/// [`binary_result_kind`].
pub fn apply_binary(op: BinaryOp, a: Scalar, b: Scalar) -> Scalar {
    let both_int = matches!((a, b), (Scalar::Int(_), Scalar::Int(_)));
    let both_bool = matches!((a, b), (Scalar::Bool(_), Scalar::Bool(_)));
    match op {
        BinaryOp::Add if both_int => Scalar::Int(int_of(a).wrapping_add(int_of(b))),
        BinaryOp::Sub if both_int => Scalar::Int(int_of(a).wrapping_sub(int_of(b))),
        BinaryOp::Mul if both_int => Scalar::Int(int_of(a).wrapping_mul(int_of(b))),
        BinaryOp::Add => Scalar::Float(f64_of(a) + f64_of(b)),
        BinaryOp::Sub => Scalar::Float(f64_of(a) - f64_of(b)),
        BinaryOp::Mul => Scalar::Float(f64_of(a) * f64_of(b)),
        BinaryOp::Div => Scalar::Float(f64_of(a) / f64_of(b)),
        BinaryOp::Atan2 => Scalar::Float(f64_of(a).atan2(f64_of(b))),
        BinaryOp::And => Scalar::Bool(bool_of(a) & bool_of(b)),
        BinaryOp::Or => Scalar::Bool(bool_of(a) | bool_of(b)),
        BinaryOp::Eq if both_bool => Scalar::Bool(bool_of(a) == bool_of(b)),
        BinaryOp::Ne if both_bool => Scalar::Bool(bool_of(a) != bool_of(b)),
        _ if both_int => {
            let (x, y) = (int_of(a), int_of(b));
            Scalar::Bool(match op {
                BinaryOp::Lt => x < y,
                BinaryOp::Gt => x > y,
                BinaryOp::Le => x <= y,
                BinaryOp::Ge => x >= y,
                BinaryOp::Eq => x == y,
                BinaryOp::Ne => x != y,
                _ => unreachable!(),
            })
        }
        _ => {
            let (x, y) = (f64_of(a), f64_of(b));
            Scalar::Bool(match op {
                BinaryOp::Lt => x < y,
                BinaryOp::Gt => x > y,
                BinaryOp::Le => x <= y,
                BinaryOp::Ge => x >= y,
                BinaryOp::Eq => x == y,
                BinaryOp::Ne => x != y,
                _ => unreachable!(),
            })
        }
    }
}

/// Elementwise binary operation. Scalars broadcast to every element; two
/// array operands must have identical offset levels.
pub fn elementwise_binary(op: BinaryOp, lhs: Operand<'_>, rhs: Operand<'_>) -> Result<JaggedArray, JaggedError> {
    let out_kind = binary_result_kind(op, lhs.kind(), rhs.kind()).ok_or_else(|| JaggedError::KindMismatch {
        op: op.to_string(),
        kinds: format!("{} and {}", lhs.kind(), rhs.kind()),
    })?;
    let shape = match (lhs, rhs) {
        (Operand::Array(a), Operand::Array(b)) => {
            if !a.same_structure(b) {
                return Err(JaggedError::ShapeMismatch { op: op.to_string() });
            }
            a
        }
        (Operand::Array(a), Operand::Scalar(_)) | (Operand::Scalar(_), Operand::Array(a)) => a,
        (Operand::Scalar(_), Operand::Scalar(_)) => {
            return Err(JaggedError::ShapeMismatch { op: format!("{op} (no array operand)") })
        }
    };
    let n = shape.values.len();
    let values = Values::from_scalars(out_kind, (0..n).map(|i| apply_binary(op, lhs.get(i), rhs.get(i))));
    Ok(JaggedArray { offsets: shape.offsets.clone(), values })
}

pub fn apply_unary(op: UnaryOp, x: f64) -> f64 {
    match op {
        UnaryOp::Neg => -x,
        UnaryOp::Abs => x.abs(),
        UnaryOp::Sqrt => x.sqrt(),
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
    }
}

/// Elementwise unary math. Numeric input, Float output.
pub fn elementwise_unary(op: UnaryOp, a: &JaggedArray) -> Result<JaggedArray, JaggedError> {
    let values = match &a.values {
        Values::Float(v) => v.iter().map(|&x| apply_unary(op, x)).collect(),
        Values::Int(v) => v.iter().map(|&x| apply_unary(op, x as f64)).collect(),
        Values::Bool(_) => {
            return Err(JaggedError::KindMismatch { op: op.to_string(), kinds: "bool".into() });
        }
    };
    Ok(JaggedArray { offsets: a.offsets.clone(), values: Values::Float(values) })
}

/// Keeps the innermost elements where `mask` is true. Outer levels keep their
/// counts; only innermost lists shrink.
pub fn mask_innermost(a: &JaggedArray, mask: &JaggedArray) -> Result<JaggedArray, JaggedError> {
    if a.depth() == 0 {
        return Err(JaggedError::DepthTooSmall { op: "mask".into(), required: 1, actual: 0 });
    }
    if !a.same_structure(mask) {
        return Err(JaggedError::ShapeMismatch { op: "mask".into() });
    }
    let Values::Bool(keep) = &mask.values else {
        return Err(JaggedError::KindMismatch { op: "mask".into(), kinds: mask.kind().to_string() });
    };
    let inner = a.offsets.last().unwrap();
    let mut new_inner = Vec::with_capacity(inner.len());
    new_inner.push(0);
    let mut kept = Vec::new();
    for w in inner.windows(2) {
        kept.extend((w[0]..w[1]).filter(|&i| keep[i]));
        new_inner.push(kept.len());
    }
    let mut offsets = a.offsets.clone();
    *offsets.last_mut().unwrap() = new_inner;
    Ok(JaggedArray { offsets, values: a.values.gather(&kept) })
}

/// Reduces every innermost list to one value; depth drops by one.
pub fn reduce_innermost(op: AggregateOp, a: &JaggedArray) -> Result<JaggedArray, JaggedError> {
    if a.depth() == 0 {
        return Err(JaggedError::DepthTooSmall { op: op.to_string(), required: 1, actual: 0 });
    }
    let kind = a.kind();
    let out_kind = match op {
        AggregateOp::Count => ElementKind::Int,
        AggregateOp::First => kind,
        AggregateOp::Sum | AggregateOp::Min | AggregateOp::Max => {
            if !kind.is_numeric() {
                return Err(JaggedError::KindMismatch { op: op.to_string(), kinds: kind.to_string() });
            }
            kind
        }
        AggregateOp::Any | AggregateOp::All => {
            if kind != ElementKind::Bool {
                return Err(JaggedError::KindMismatch { op: op.to_string(), kinds: kind.to_string() });
            }
            ElementKind::Bool
        }
    };
    let level = a.depth() - 1;
    let inner = &a.offsets[level];
    let mut out = Vec::with_capacity(inner.len() - 1);
    for (list, w) in inner.windows(2).enumerate() {
        let (s, e) = (w[0], w[1]);
        let empty = || JaggedError::EmptySequence { op: op.to_string(), row: a.row_of(level, list) };
        let v = match op {
            AggregateOp::Count => Scalar::Int((e - s) as i64),
            AggregateOp::First => {
                if s == e {
                    return Err(empty());
                }
                a.values.get(s)
            }
            AggregateOp::Sum => match &a.values {
                Values::Int(v) => Scalar::Int(v[s..e].iter().fold(0i64, |acc, x| acc.wrapping_add(*x))),
                Values::Float(v) => Scalar::Float(v[s..e].iter().fold(0.0, |acc, x| acc + x)),
                Values::Bool(_) => unreachable!(),
            },
            AggregateOp::Min | AggregateOp::Max => {
                if s == e {
                    return Err(empty());
                }
                let pick_min = op == AggregateOp::Min;
                match &a.values {
                    Values::Int(v) => {
                        let it = v[s..e].iter().copied();
                        Scalar::Int(if pick_min { it.min().unwrap() } else { it.max().unwrap() })
                    }
                    Values::Float(v) => {
                        Scalar::Float(v[s + 1..e].iter().fold(
                            v[s],
                            |acc, &x| {
                                if pick_min {
                                    acc.min(x)
                                } else {
                                    acc.max(x)
                                }
                            },
                        ))
                    }
                    Values::Bool(_) => unreachable!(),
                }
            }
            AggregateOp::Any => match &a.values {
                Values::Bool(v) => Scalar::Bool(v[s..e].iter().any(|&x| x)),
                _ => unreachable!(),
            },
            AggregateOp::All => match &a.values {
                Values::Bool(v) => Scalar::Bool(v[s..e].iter().all(|&x| x)),
                _ => unreachable!(),
            },
        };
        out.push(v);
    }
    let mut offsets = a.offsets.clone();
    offsets.pop();
    Ok(JaggedArray { offsets, values: Values::from_scalars(out_kind, out) })
}

/// Offsets of the depth-2 structure produced when, per row, every element of
/// `outer` is paired with the whole list of `inner`.
pub fn cross_nest(outer: &JaggedArray, inner: &JaggedArray) -> Result<Vec<Vec<usize>>, JaggedError> {
    if outer.depth() != 1 || inner.depth() != 1 {
        return Err(JaggedError::DepthTooSmall {
            op: "cross_nest".into(),
            required: 1,
            actual: outer.depth().min(inner.depth()),
        });
    }
    if outer.rows() != inner.rows() {
        return Err(JaggedError::ShapeMismatch { op: "cross_nest".into() });
    }
    let (oo, io) = (&outer.offsets[0], &inner.offsets[0]);
    let mut lists = vec![0usize];
    let mut elems = vec![0usize];
    for row in 0..outer.rows() {
        let n_inner = io[row + 1] - io[row];
        for _ in oo[row]..oo[row + 1] {
            elems.push(elems.last().unwrap() + n_inner);
        }
        lists.push(elems.len() - 1);
    }
    Ok(vec![lists, elems])
}

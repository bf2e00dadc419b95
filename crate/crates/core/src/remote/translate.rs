//! Translation between canonical DAG nodes and query text.
//!
//! A sequence-valued node is represented during translation as a *view*:
//! a base sequence expression plus a per-element expression in terms of a
//! bound variable. Elementwise operations on views over the same base fuse
//! into one `Select`; filters become `Where` stages on the base.
//!
//! Without cross-referencing support a lambda body may only mention its own
//! parameter: no `From`, no parameters of enclosing lambdas. Filters must
//! then select the records themselves (not a derived leaf column), so
//! predicates reading other leaves stay with the local backend.

use std::cell::Cell;
use std::collections::HashMap;

use crate::expr::{canonicalize, BuildError, CanonicalDag, ExprHandle, Graph, NodeId, NodeKind, Origin};
use crate::ops::{AggregateOp, UnaryOp};

use super::query::{parse_query, Lambda, QExpr, Stage};
use super::QueryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TranslateOptions {
    /// Lambdas may reference the event and enclosing lambda parameters.
    pub cross_reference: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum View {
    Row(QExpr),
    Seq { base: QExpr, var: String, elem: Box<View> },
}

impl View {
    fn rename(&self, from: &str, to: &str) -> View {
        let to_e = QExpr::Var(to.to_string());
        match self {
            View::Row(e) => View::Row(e.substitute(from, &to_e)),
            View::Seq { base, var, elem } => View::Seq {
                base: base.substitute(from, &to_e),
                var: var.clone(),
                elem: Box::new(elem.rename(from, to)),
            },
        }
    }
}

/// Translates closed `node` into query text.
pub fn translate(dag: &CanonicalDag, node: NodeId, opts: TranslateOptions) -> Result<String, QueryError> {
    Ok(translate_expr(dag, node, opts)?.render())
}

/// Translates closed `node` into a query AST.
pub fn translate_expr(dag: &CanonicalDag, node: NodeId, opts: TranslateOptions) -> Result<QExpr, QueryError> {
    if !dag.is_closed(node) {
        return Err(QueryError::Untranslatable { node, reason: "depends on an enclosing parameter".into() });
    }
    let t = Translator { dag, opts, fresh: Cell::new(0), node };
    let view = t.view(node, &HashMap::new())?;
    t.to_expr(view)
}

struct Translator<'a> {
    dag: &'a CanonicalDag,
    opts: TranslateOptions,
    fresh: Cell<u32>,
    node: NodeId,
}

type Env = HashMap<u32, QExpr>;

impl Translator<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, QueryError> {
        Err(QueryError::Untranslatable { node: self.node, reason: reason.into() })
    }

    fn var(&self) -> String {
        let n = self.fresh.get();
        self.fresh.set(n + 1);
        format!("#{n}")
    }

    fn lambda(&self, var: &str, body: QExpr) -> Result<Lambda, QueryError> {
        if !self.opts.cross_reference && body.references_outside(&[var]) {
            return self.fail("a lambda references the event or an enclosing parameter");
        }
        Ok(Lambda::new(var, body))
    }

    fn to_expr(&self, v: View) -> Result<QExpr, QueryError> {
        match v {
            View::Row(e) => Ok(e),
            View::Seq { base, var, elem } => {
                if *elem == View::Row(QExpr::Var(var.clone())) {
                    return Ok(base);
                }
                let body = self.to_expr(*elem)?;
                Ok(base.chain(Stage::Select(self.lambda(&var, body)?)))
            }
        }
    }

    fn same_base(a: &QExpr, b: &QExpr) -> bool {
        a.render() == b.render()
    }

    fn lift(&self, parts: Vec<View>, f: &dyn Fn(Vec<QExpr>) -> QExpr) -> Result<View, QueryError> {
        let seq = parts.iter().find_map(|p| match p {
            View::Seq { base, var, .. } => Some((base.clone(), var.clone())),
            View::Row(_) => None,
        });
        let Some((base, var)) = seq else {
            let rows = parts
                .into_iter()
                .map(|p| match p {
                    View::Row(e) => e,
                    View::Seq { .. } => unreachable!(),
                })
                .collect();
            return Ok(View::Row(f(rows)));
        };
        let mut inner = Vec::with_capacity(parts.len());
        for p in parts {
            match p {
                View::Row(e) => inner.push(View::Row(e)),
                View::Seq { base: b, var: v, elem } => {
                    if !Self::same_base(&base, &b) {
                        return self.fail("operands iterate over different sequences");
                    }
                    inner.push(elem.rename(&v, &var));
                }
            }
        }
        let elem = self.lift(inner, f)?;
        Ok(View::Seq { base, var, elem: Box::new(elem) })
    }

    fn view(&self, n: NodeId, env: &Env) -> Result<View, QueryError> {
        let dag = self.dag;
        Ok(match dag.kind(n) {
            NodeKind::Source { dataset } => View::Row(QExpr::From(dataset.clone())),
            NodeKind::Constant(v) => View::Row(QExpr::Lit(*v)),
            NodeKind::Param { binder, .. } => match env.get(binder) {
                Some(e) => View::Row(e.clone()),
                None => return self.fail("unbound parameter"),
            },
            NodeKind::Attribute { parent, name } => {
                let p = self.view(*parent, env)?;
                if *dag.origin(*parent) == Origin::Events {
                    let View::Row(ev) = p else { return self.fail("event table inside a sequence") };
                    let var = self.var();
                    View::Seq {
                        base: ev.chain(Stage::Get(name.clone())),
                        var: var.clone(),
                        elem: Box::new(View::Row(QExpr::Var(var))),
                    }
                } else {
                    let name = name.clone();
                    self.lift(vec![p], &move |mut a| a.pop().unwrap().member(&name))?
                }
            }
            NodeKind::Unary { op, operand } => {
                let op = *op;
                let x = self.view(*operand, env)?;
                self.lift(vec![x], &move |mut a| QExpr::Unary(op, Box::new(a.pop().unwrap())))?
            }
            NodeKind::Binary { op, left, right } => {
                let op = *op;
                let parts = vec![self.view(*left, env)?, self.view(*right, env)?];
                self.lift(parts, &move |mut a| {
                    let r = a.pop().unwrap();
                    let l = a.pop().unwrap();
                    QExpr::Binary(op, Box::new(l), Box::new(r))
                })?
            }
            NodeKind::Call { function, args } => {
                let parts = args.iter().map(|a| self.view(*a, env)).collect::<Result<Vec<_>, _>>()?;
                let f = function.clone();
                self.lift(parts, &move |a| QExpr::Call(f.clone(), a))?
            }
            NodeKind::Filter { seq, predicate } => {
                let s = self.view(*seq, env)?;
                let p = self.view(*predicate, env)?;
                self.filter(s, p)?
            }
            NodeKind::Map { seq, param, body } => {
                let NodeKind::Param { binder, .. } = dag.kind(*param) else {
                    return self.fail("map without a parameter");
                };
                let s = self.view(*seq, env)?;
                self.map(s, *binder, *body, env)?
            }
            NodeKind::Aggregate { op, seq } => {
                let s = self.view(*seq, env)?;
                self.aggregate(*op, s)?
            }
            NodeKind::Invalid(e) => return self.fail(e.to_string()),
        })
    }

    fn filter(&self, s: View, p: View) -> Result<View, QueryError> {
        let View::Seq { base, var, elem } = s else {
            return self.fail("filter of a non-sequence");
        };
        let p_elem = match p {
            View::Seq { base: pb, var: pv, elem: pe } => {
                if !Self::same_base(&base, &pb) {
                    return self.fail("predicate iterates over a different sequence");
                }
                pe.rename(&pv, &var)
            }
            View::Row(c) => View::Row(c),
        };
        match (*elem, p_elem) {
            (View::Row(x), View::Row(pred)) => {
                if !self.opts.cross_reference && x != QExpr::Var(var.clone()) {
                    return self.fail("filtering a derived column needs cross-referencing");
                }
                let w = self.var();
                let pred = pred.substitute(&var, &QExpr::Var(w.clone()));
                let base = base.chain(Stage::Where(self.lambda(&w, pred)?));
                Ok(View::Seq { base, var, elem: Box::new(View::Row(x)) })
            }
            (inner @ View::Seq { .. }, pinner) => {
                let elem = self.filter(inner, pinner)?;
                Ok(View::Seq { base, var, elem: Box::new(elem) })
            }
            (View::Row(_), View::Seq { .. }) => self.fail("predicate is deeper than the sequence"),
        }
    }

    fn map(&self, s: View, binder: u32, body: NodeId, env: &Env) -> Result<View, QueryError> {
        let View::Seq { base, var, elem } = s else {
            return self.fail("map over a non-sequence");
        };
        let elem = match *elem {
            View::Row(x) => {
                let mut inner = env.clone();
                inner.insert(binder, x);
                self.view(body, &inner)?
            }
            seq @ View::Seq { .. } => self.map(seq, binder, body, env)?,
        };
        Ok(View::Seq { base, var, elem: Box::new(elem) })
    }

    fn aggregate(&self, op: AggregateOp, s: View) -> Result<View, QueryError> {
        let View::Seq { base, var, elem } = s else {
            return self.fail(format!("{op} of a non-sequence"));
        };
        match *elem {
            View::Row(x) => {
                let seq = self.to_expr(View::Seq { base, var, elem: Box::new(View::Row(x)) })?;
                Ok(View::Row(seq.chain(Stage::Agg(op))))
            }
            inner @ View::Seq { .. } => {
                let elem = self.aggregate(op, inner)?;
                Ok(View::Seq { base, var, elem: Box::new(elem) })
            }
        }
    }
}

/// Records a parsed query into `graph`, resolving variables lexically.
/// `Select` applied to the event itself binds the event to its parameter.
pub fn query_to_graph(graph: &Graph, q: &QExpr) -> Result<ExprHandle, QueryError> {
    build(graph, q, &HashMap::new())
}

fn build(g: &Graph, q: &QExpr, env: &HashMap<String, ExprHandle>) -> Result<ExprHandle, QueryError> {
    Ok(match q {
        QExpr::From(ds) => g.source(ds),
        QExpr::Var(v) => env.get(v).cloned().ok_or_else(|| QueryError::UnknownVariable(v.clone()))?,
        QExpr::Lit(v) => g.constant(*v),
        QExpr::Member(x, name) => build(g, x, env)?.attr(name),
        QExpr::Unary(op, x) => build(g, x, env)?.unary_op(*op),
        QExpr::Binary(op, a, b) => {
            let l = build(g, a, env)?;
            let r = build(g, b, env)?;
            l.binary_op(*op, &r)
        }
        QExpr::Call(f, args) => {
            if UnaryOp::from_function_name(f).is_some() {
                return Err(QueryError::Build(BuildError::Arity { name: f.clone(), expected: 1, actual: args.len() }));
            }
            let hs = args.iter().map(|a| build(g, a, env)).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&ExprHandle> = hs.iter().collect();
            g.call(f, &refs)?
        }
        QExpr::Chain(x, stage) => {
            let seq = build(g, x, env)?;
            match stage {
                Stage::Get(c) => seq.attr(c),
                Stage::Agg(op) => seq.aggregate(*op),
                Stage::Where(l) | Stage::Select(l) => {
                    let mut err = None;
                    let mut apply = |e: &ExprHandle| {
                        let mut inner = env.clone();
                        inner.insert(l.param.clone(), e.clone());
                        match build(g, &l.body, &inner) {
                            Ok(h) => h,
                            Err(er) => {
                                err = Some(er);
                                g.constant(false)
                            }
                        }
                    };
                    let out = match stage {
                        Stage::Select(_) if seq.origin() == Origin::Events => apply(&seq),
                        Stage::Select(_) => seq.map(&mut apply),
                        _ => seq.filter_with(&mut apply),
                    };
                    if let Some(e) = err {
                        return Err(e);
                    }
                    out
                }
            }
        }
    })
}

/// Parses query text into a canonical DAG with one root, using `graph` for
/// function declarations.
pub fn parse_to_dag(graph: &Graph, text: &str) -> Result<CanonicalDag, QueryError> {
    let q = parse_query(text)?;
    let root = query_to_graph(graph, &q)?;
    Ok(canonicalize(&[&root])?)
}

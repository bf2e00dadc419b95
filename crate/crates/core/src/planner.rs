//! Partitioning of canonical DAGs across backends, and plan execution.
//!
//! Plan units are closed nodes; a `Map` carries its body with it. Units are
//! assigned greedily in topological order: a unit stays on the backend of its
//! inputs when that backend accepts it, otherwise it goes to the first
//! accepting backend in priority order. A remote backend accepts a unit only
//! when all its inputs are remote and the unit translates into a query; a
//! local backend accepts anything whose functions it implements, but reads
//! the dataset only when configured to. The event table never crosses
//! backends. Constants are evaluated wherever they are used and never count
//! as boundaries.
//!
//! Steps group units by (stage, backend); a unit's stage is the largest stage
//! of its inputs, plus one when an input lives on another backend. Steps of
//! the same stage run concurrently.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::dataset::EventData;
use crate::error::ExecError;
use crate::expr::{CanonicalDag, NodeId, NodeKind, Origin};
use crate::jagged::JaggedArray;
use crate::local::{LocalExecutor, Value};
use crate::remote::translate::{translate, TranslateOptions};
use crate::remote::RemoteExecutor;
use crate::schema::ShapeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackendKind {
    Remote,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendCapability {
    pub id: String,
    pub kind: BackendKind,
    /// Whether the backend can read the dataset itself.
    pub reads_dataset: bool,
    /// Remote only: whether queries may use cross-referencing lambdas.
    pub cross_reference: bool,
    pub functions: BTreeSet<String>,
}

impl BackendCapability {
    pub fn remote(functions: BTreeSet<String>, cross_reference: bool) -> Self {
        BackendCapability {
            id: "remote".into(),
            kind: BackendKind::Remote,
            reads_dataset: true,
            cross_reference,
            functions,
        }
    }

    pub fn local(functions: BTreeSet<String>, reads_dataset: bool) -> Self {
        BackendCapability {
            id: "local".into(),
            kind: BackendKind::Local,
            reads_dataset,
            cross_reference: false,
            functions,
        }
    }

    fn describe(&self) -> String {
        let mut s = format!("{} ({}", self.id, if self.kind == BackendKind::Remote { "remote" } else { "local" });
        if self.reads_dataset {
            s.push_str(", reads dataset");
        }
        if self.kind == BackendKind::Remote {
            s.push_str(if self.cross_reference { ", cross-reference on" } else { ", cross-reference off" });
        }
        s.push(')');
        s
    }
}

/// The remote service plus a local interpreter that cannot read data.
pub fn split_backends(functions: &BTreeSet<String>, cross_reference: bool) -> Vec<BackendCapability> {
    vec![
        BackendCapability::remote(functions.clone(), cross_reference),
        BackendCapability::local(functions.clone(), false),
    ]
}

/// A single local interpreter reading the dataset directly.
pub fn all_local_backends(functions: &BTreeSet<String>) -> Vec<BackendCapability> {
    vec![BackendCapability::local(functions.clone(), true)]
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("no backend can evaluate {node} ({label}): {reasons}")]
    NoBackend { node: NodeId, label: String, reasons: String },
    #[error("function `{function}` used by {node} is not available on an eligible backend (provided by: {providers})")]
    FunctionUnavailable { node: NodeId, function: String, providers: String },
    #[error("no backends configured")]
    NoBackends,
    #[error("expression reads dataset `{found}`, session serves `{expected}`")]
    WrongDataset { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub id: usize,
    pub stage: usize,
    pub backend: usize,
    /// Units evaluated by this step, constants included, in node order.
    pub nodes: Vec<NodeId>,
    /// Units whose values leave the step: consumed elsewhere or roots.
    pub outputs: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Boundary {
    pub from: NodeId,
    pub to: NodeId,
}

#[derive(Debug, Clone)]
pub struct Plan {
    backends: Vec<BackendCapability>,
    assignment: BTreeMap<NodeId, usize>,
    steps: Vec<Step>,
    boundaries: Vec<Boundary>,
    roots: Vec<NodeId>,
    queries: BTreeMap<NodeId, String>,
}

impl Plan {
    pub fn backends(&self) -> &[BackendCapability] {
        &self.backends
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn boundaries(&self) -> &[Boundary] {
        &self.boundaries
    }

    /// Backend index of a planned unit.
    pub fn backend_of(&self, node: NodeId) -> Option<usize> {
        self.assignment.get(&node).copied()
    }

    /// Query text of each remote step output.
    pub fn queries(&self) -> &BTreeMap<NodeId, String> {
        &self.queries
    }

    /// Planned units, by backend id.
    pub fn nodes_on(&self, backend_id: &str) -> Vec<NodeId> {
        self.assignment.iter().filter(|(_, b)| self.backends[**b].id == backend_id).map(|(n, _)| *n).collect()
    }

    /// Deterministic text form. `sizes` optionally gives the encoded size in
    /// bytes of each boundary source.
    pub fn dump(&self, dag: &CanonicalDag, sizes: Option<&BTreeMap<NodeId, usize>>) -> String {
        let mut s = String::new();
        let names: Vec<String> = self.backends.iter().map(BackendCapability::describe).collect();
        let _ = writeln!(s, "backends: {}", names.join(", "));
        for step in &self.steps {
            let _ = writeln!(s, "step {} [stage {}] on {}", step.id, step.stage, self.backends[step.backend].id);
            for n in &step.nodes {
                let _ = writeln!(s, "  {n} {}", dag.label(*n));
            }
            let outs: Vec<String> = step.outputs.iter().map(|n| n.to_string()).collect();
            let _ = writeln!(s, "  outputs: {}", outs.join(" "));
            for o in &step.outputs {
                if let Some(q) = self.queries.get(o) {
                    let _ = writeln!(s, "  query {o}: {q}");
                }
            }
        }
        let _ = writeln!(s, "boundaries: {}", self.boundaries.len());
        for b in &self.boundaries {
            let from = &self.backends[self.assignment[&b.from]].id;
            let to = &self.backends[self.assignment[&b.to]].id;
            let _ = write!(s, "  {} {} ({from}) -> {} {} ({to})", b.from, dag.label(b.from), b.to, dag.label(b.to));
            if let Some(sz) = sizes.and_then(|m| m.get(&b.from)) {
                let _ = write!(s, " [{sz} bytes]");
            }
            s.push('\n');
        }
        let roots: Vec<String> = self.roots.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(s, "roots: {}", roots.join(" "));
        s
    }
}

/// Functions called by a unit, including inside its map body.
fn unit_functions(dag: &CanonicalDag, n: NodeId) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![n];
    let mut seen = BTreeSet::new();
    while let Some(x) = stack.pop() {
        if !seen.insert(x) {
            continue;
        }
        if let NodeKind::Call { function, .. } = dag.kind(x) {
            out.insert(function.clone());
        }
        if x == n || !dag.is_closed(x) {
            stack.extend(dag.kind(x).inputs());
        }
    }
    out
}

/// Closed units reachable from the roots, in node order.
fn units(dag: &CanonicalDag) -> Vec<NodeId> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<NodeId> = dag.roots().to_vec();
    while let Some(n) = stack.pop() {
        if seen.insert(n) {
            stack.extend(dag.closed_inputs(n));
        }
    }
    seen.into_iter().collect()
}

/// Built from literals alone. Such values broadcast like a literal, so they
/// are evaluated next to their consumer instead of crossing a boundary.
fn is_constant(dag: &CanonicalDag, n: NodeId) -> bool {
    match dag.kind(n) {
        NodeKind::Constant(_) => true,
        NodeKind::Unary { operand, .. } => is_constant(dag, *operand),
        NodeKind::Binary { left, right, .. } => is_constant(dag, *left) && is_constant(dag, *right),
        NodeKind::Call { args, .. } => args.iter().all(|a| is_constant(dag, *a)),
        _ => false,
    }
}

pub fn plan(dag: &CanonicalDag, backends: &[BackendCapability]) -> Result<Plan, PlanError> {
    if backends.is_empty() {
        return Err(PlanError::NoBackends);
    }
    let units = units(dag);
    let mut assignment: BTreeMap<NodeId, usize> = BTreeMap::new();
    let inputs_of =
        |n: NodeId| -> Vec<NodeId> { dag.closed_inputs(n).into_iter().filter(|i| !is_constant(dag, *i)).collect() };

    for &n in units.iter().filter(|n| !is_constant(dag, **n)) {
        let inputs = inputs_of(n);
        let fns = unit_functions(dag, n);
        let accepts = |b: usize, assignment: &BTreeMap<NodeId, usize>| -> Result<(), String> {
            let cap = &backends[b];
            if let Some(f) = fns.iter().find(|f| !cap.functions.contains(*f)) {
                return Err(format!("{} lacks `{f}`", cap.id));
            }
            if matches!(dag.kind(n), NodeKind::Source { .. }) && !cap.reads_dataset {
                return Err(format!("{} cannot read the dataset", cap.id));
            }
            for i in &inputs {
                let ib = assignment[i];
                if ib != b && *dag.origin(*i) == Origin::Events {
                    return Err(format!("the event table cannot move to {}", cap.id));
                }
                if cap.kind == BackendKind::Remote && ib != b {
                    return Err(format!("{} cannot consume values computed elsewhere", cap.id));
                }
            }
            if cap.kind == BackendKind::Remote {
                let opts = TranslateOptions { cross_reference: cap.cross_reference };
                translate(dag, n, opts).map_err(|e| format!("{}: {e}", cap.id))?;
            }
            Ok(())
        };
        let common: BTreeSet<usize> = inputs.iter().map(|i| assignment[i]).collect();
        let mut chosen = None;
        if common.len() == 1 {
            let b = *common.iter().next().unwrap();
            if accepts(b, &assignment).is_ok() {
                chosen = Some(b);
            }
        }
        let mut reasons = Vec::new();
        if chosen.is_none() {
            for b in 0..backends.len() {
                match accepts(b, &assignment) {
                    Ok(()) => {
                        chosen = Some(b);
                        break;
                    }
                    Err(r) => reasons.push(r),
                }
            }
        }
        let Some(b) = chosen else {
            if let Some(f) = fns.iter().find(|f| backends.iter().any(|c| !c.functions.contains(*f))) {
                let providers: Vec<&str> =
                    backends.iter().filter(|c| c.functions.contains(f)).map(|c| c.id.as_str()).collect();
                return Err(PlanError::FunctionUnavailable {
                    node: n,
                    function: f.clone(),
                    providers: if providers.is_empty() { "none".into() } else { providers.join(", ") },
                });
            }
            return Err(PlanError::NoBackend { node: n, label: dag.label(n), reasons: reasons.join("; ") });
        };
        assignment.insert(n, b);
    }

    // Constants follow their first consumer, which may itself be a constant,
    // so consumers are placed first.
    let consumer = |n: NodeId| units.iter().copied().find(|u| dag.closed_inputs(*u).contains(&n));
    for &n in units.iter().rev().filter(|n| is_constant(dag, **n)) {
        // A constant root goes first in priority order: whoever evaluates it
        // must know the event count.
        let b = consumer(n).map(|c| assignment[&c]).unwrap_or(0);
        assignment.insert(n, b);
    }

    let mut stage: BTreeMap<NodeId, usize> = BTreeMap::new();
    for &n in units.iter().filter(|n| !is_constant(dag, **n)) {
        let b = assignment[&n];
        let s = inputs_of(n).iter().map(|i| stage[i] + usize::from(assignment[i] != b)).max().unwrap_or(0);
        stage.insert(n, s);
    }
    for &n in units.iter().rev().filter(|n| is_constant(dag, **n)) {
        let s = consumer(n).map(|c| stage[&c]).unwrap_or(0);
        stage.insert(n, s);
    }

    let mut groups: BTreeMap<(usize, usize), Vec<NodeId>> = BTreeMap::new();
    for &n in &units {
        groups.entry((stage[&n], assignment[&n])).or_default().push(n);
    }
    let mut boundaries = BTreeSet::new();
    let mut leaving = BTreeSet::new();
    for &n in &units {
        for i in dag.closed_inputs(n) {
            if is_constant(dag, i) {
                continue;
            }
            if assignment[&i] != assignment[&n] {
                boundaries.insert(Boundary { from: i, to: n });
            }
            if (stage[&i], assignment[&i]) != (stage[&n], assignment[&n]) {
                leaving.insert(i);
            }
        }
    }
    leaving.extend(dag.roots().iter().copied());

    let mut steps = Vec::new();
    let mut queries = BTreeMap::new();
    for ((st, b), nodes) in groups {
        let outputs: Vec<NodeId> = nodes.iter().filter(|n| leaving.contains(n)).copied().collect();
        if backends[b].kind == BackendKind::Remote {
            let opts = TranslateOptions { cross_reference: backends[b].cross_reference };
            for o in &outputs {
                if let Ok(q) = translate(dag, *o, opts) {
                    queries.insert(*o, q);
                }
            }
        }
        steps.push(Step { id: steps.len(), stage: st, backend: b, nodes, outputs });
    }
    Ok(Plan {
        backends: backends.to_vec(),
        assignment,
        steps,
        boundaries: boundaries.into_iter().collect(),
        roots: dag.roots().to_vec(),
        queries,
    })
}

/// A backend able to run plan steps.
#[derive(Debug, Clone)]
pub enum Executor {
    Remote(RemoteExecutor),
    Local { executor: LocalExecutor, data: Option<Arc<EventData>> },
}

/// Values of the roots plus the values that crossed each boundary.
#[derive(Debug, Clone)]
pub struct Execution {
    pub roots: Vec<JaggedArray>,
    pub n_events: usize,
    /// Encoded size of each value shipped between backends.
    pub boundary_sizes: BTreeMap<NodeId, usize>,
}

/// Values a step produced, and the event count it observed if any.
type StepOutcome = Result<(Vec<Value>, Option<usize>), ExecError>;

/// Runs `plan` with one executor per planned backend (same order).
pub fn execute(
    plan: &Plan,
    dag: &CanonicalDag,
    shapes: Option<&ShapeMap>,
    executors: &[Executor],
) -> Result<Execution, ExecError> {
    let mut values: HashMap<NodeId, Value> = HashMap::new();
    let mut n_events: Option<usize> = None;
    for e in executors {
        if let Executor::Local { data: Some(d), .. } = e {
            n_events = Some(d.n_events());
        }
    }
    let last_stage = plan.steps.iter().map(|s| s.stage).max().unwrap_or(0);
    for stage in 0..=last_stage {
        let steps: Vec<&Step> = plan.steps.iter().filter(|s| s.stage == stage).collect();
        let known = &values;
        let results: Vec<StepOutcome> = std::thread::scope(|scope| {
            let handles: Vec<_> = steps
                .iter()
                .map(|step| {
                    let exec = &executors[step.backend];
                    scope.spawn(move || run_step(step, dag, shapes, exec, known, n_events))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("plan step panicked")).collect()
        });
        for (step, r) in steps.iter().zip(results) {
            let nodes: Vec<String> = step.nodes.iter().map(|n| n.to_string()).collect();
            let (vals, n) =
                r.map_err(|e| ExecError::Step { step: step.id, nodes: nodes.join(" "), source: Box::new(e) })?;
            if n.is_some() {
                n_events = n_events.or(n);
            }
            for (o, v) in step.outputs.iter().zip(vals) {
                values.insert(*o, v);
            }
        }
    }
    let n = n_events.unwrap_or(0);
    let mut boundary_sizes = BTreeMap::new();
    for b in &plan.boundaries {
        if let Some(v) = values.get(&b.from) {
            if let Ok(rs) = crate::remote::service::value_to_result(v.clone(), n, b.from) {
                boundary_sizes.insert(b.from, crate::remote::wire::encode_result(&rs).len());
            }
        }
    }
    let roots = plan
        .roots
        .iter()
        .map(|r| values.get(r).cloned().expect("roots are step outputs").into_array(n, *r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Execution { roots, n_events: n, boundary_sizes })
}

fn run_step(
    step: &Step,
    dag: &CanonicalDag,
    shapes: Option<&ShapeMap>,
    exec: &Executor,
    known: &HashMap<NodeId, Value>,
    n_events: Option<usize>,
) -> Result<(Vec<Value>, Option<usize>), ExecError> {
    match exec {
        Executor::Remote(r) => {
            let (vals, n) = r.run(dag, &step.outputs)?;
            Ok((vals, Some(n)))
        }
        Executor::Local { executor, data } => {
            let mut inputs = HashMap::new();
            for n in &step.nodes {
                for i in dag.closed_inputs(*n) {
                    if let Some(v) = known.get(&i) {
                        inputs.insert(i, v.clone());
                    }
                }
            }
            let rows = data.as_ref().map(|d| d.n_events()).or(n_events).unwrap_or(0);
            let vals = executor.run(dag, shapes, data.clone(), rows, &inputs, &step.outputs)?;
            Ok((vals, data.as_ref().map(|d| d.n_events())))
        }
    }
}

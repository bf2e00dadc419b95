//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use jagq::dataset::Dataset;
use jagq::expr::{canonicalize, CanonicalDag, ExprHandle, Graph};
use jagq::generate::{generate, Sample};
use jagq::jagged::JaggedArray;
use jagq::local::FunctionTable;
use jagq::oracle::{compare, Oracle};
use jagq::remote::parse_query;
use jagq::remote::translate::{query_to_graph, translate, TranslateOptions};
use jagq::schema::DatasetSchema;
use jagq::session::{Mode, Session};
use jagq::ErrorCategory;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DATASET: &str = "mc.zee";

pub fn sample(seed: u64, n: usize) -> (Dataset, Sample) {
    let s = generate(seed, n);
    let ds = Dataset::from_events(DATASET, DatasetSchema::default_model(), s.events.clone()).unwrap();
    (ds, s)
}

pub const MODES: [Mode; 3] =
    [Mode::AllLocal, Mode::Split { cross_reference: false }, Mode::Split { cross_reference: true }];

/// Outcome of one evaluation: an array, or the category of the failure.
pub type Outcome = Result<JaggedArray, ErrorCategory>;

/// Materializes the single root of `dag`'s expression in `mode`; also
/// reports whether any kernel ran before materialization was requested.
pub fn run_mode(ds: &Dataset, mode: Mode, root: &ExprHandle) -> (Outcome, bool) {
    let s = Session::new(ds.clone(), mode);
    let prepared = match s.prepare(&[root]) {
        Ok(p) => p,
        Err(e) => return (Err(e.category()), false),
    };
    let eager = s.local().evaluations() > 0 || s.service().node_evaluations() > 0;
    let out = s.execute(&prepared).map(|mut x| x.roots.remove(0)).map_err(|e| e.category());
    (out, eager)
}

pub fn run_oracle(ds: &Dataset, dag: &CanonicalDag) -> Outcome {
    let o = Oracle::new(dag, &ds.schema);
    o.eval_arrays(&ds.events).map(|mut v| v.remove(0)).map_err(|e| e.category)
}

/// Agreement up to `rel_tol` for floats, exact otherwise; errors agree when
/// their categories do.
pub fn agree(a: &Outcome, b: &Outcome, rel_tol: f64) -> Result<(), String> {
    match (a, b) {
        (Ok(x), Ok(y)) => {
            if x.kind() != y.kind() {
                return Err(format!("kinds differ: {} vs {}", x.kind(), y.kind()));
            }
            compare(x, &y.to_nested(), rel_tol)
        }
        (Err(x), Err(y)) if x == y => Ok(()),
        _ => Err(format!("outcomes differ: {} vs {}", describe(a), describe(b))),
    }
}

fn describe(o: &Outcome) -> String {
    match o {
        Ok(a) => format!("ok(depth {}, {} values)", a.depth(), a.values().len()),
        Err(c) => format!("error {c}"),
    }
}

/// Checks that translating each remote-capable closed node, parsing the
/// text back and translating again reproduces the text. Returns how many
/// nodes were checked.
pub fn check_fixed_point(dag: &CanonicalDag) -> Result<usize, String> {
    let opts = TranslateOptions { cross_reference: true };
    let mut checked = 0;
    for n in dag.ids().filter(|n| dag.is_closed(*n)) {
        let Ok(text) = translate(dag, n, opts) else { continue };
        let q = parse_query(&text).map_err(|e| format!("{n}: `{text}` does not parse: {e}"))?;
        let g = Graph::new();
        FunctionTable::builtins().declare_all(&g).unwrap();
        let h = query_to_graph(&g, &q).map_err(|e| format!("{n}: `{text}`: {e}"))?;
        let back = canonicalize(&[&h]).map_err(|e| format!("{n}: {e}"))?;
        let again = translate(&back, back.roots()[0], opts).map_err(|e| format!("{n}: retranslation: {e}"))?;
        if again != text {
            return Err(format!("{n}: `{text}` came back as `{again}`"));
        }
        checked += 1;
    }
    Ok(checked)
}

const COLLECTIONS: [&str; 3] = ["Electrons", "Jets", "TruthParticles"];

#[derive(Clone)]
pub struct Var {
    h: ExprHandle,
    coll: &'static str,
}

/// Random well-shaped expressions over the default schema. Arrays are only
/// combined when they derive from the same collection node, so structure
/// always lines up; the only runtime failure left is an empty `First`,
/// `Min` or `Max`.
pub struct ExprGen {
    rng: ChaCha8Rng,
    pub graph: Graph,
    ev: ExprHandle,
}

impl ExprGen {
    pub fn new(seed: u64) -> Self {
        let graph = Graph::new();
        FunctionTable::builtins().declare_all(&graph).unwrap();
        let ev = graph.source(DATASET);
        ExprGen { rng: ChaCha8Rng::seed_from_u64(seed), graph, ev }
    }

    fn pick<T: Copy>(&mut self, xs: &[T]) -> T {
        *xs.choose(&mut self.rng).unwrap()
    }

    fn constant(&mut self) -> ExprHandle {
        if self.rng.gen_bool(0.3) {
            self.graph.constant(self.rng.gen_range(-3i64..=12))
        } else {
            let x: f64 = self.pick(&[0.0, 0.5, 1.0, 1.4, 2.0, 20.0, 50000.0, -1.5, 1000.0]);
            self.graph.constant(x)
        }
    }

    fn leaf(&mut self, v: &Var) -> ExprHandle {
        let leaves: &[&str] =
            if v.coll == "TruthParticles" { &["pt", "eta", "phi", "pdgId"] } else { &["pt", "eta", "phi"] };
        let l = self.pick(leaves);
        v.h.attr(l)
    }

    /// A collection of the event, filtered by a random predicate half the
    /// time. The predicate may capture `vars`.
    fn collection(&mut self, vars: &[Var], budget: u32) -> (ExprHandle, &'static str) {
        let coll = self.pick(&COLLECTIONS);
        let c = self.ev.attr(coll);
        if budget == 0 || self.rng.gen_bool(0.5) {
            return (c, coll);
        }
        let mut sub = self.fork();
        let outer = vars.to_vec();
        let f = c.filter_with(|r| {
            let mut inner = outer.clone();
            inner.push(Var { h: r.clone(), coll });
            sub.bool_expr(&inner, budget - 1)
        });
        (f, coll)
    }

    /// A sub-generator for a lambda body, seeded from this one.
    fn fork(&mut self) -> ExprGen {
        ExprGen { rng: ChaCha8Rng::seed_from_u64(self.rng.gen()), graph: self.graph.clone(), ev: self.ev.clone() }
    }

    /// One number per binding of the innermost variable (per event when
    /// `vars` is empty).
    pub fn num_expr(&mut self, vars: &[Var], budget: u32) -> ExprHandle {
        let choice = if budget == 0 { self.rng.gen_range(0..2) } else { self.rng.gen_range(0..9) };
        match choice {
            0 if !vars.is_empty() => {
                let v = self.pick_var(vars);
                self.leaf(&v)
            }
            0 | 1 => self.constant(),
            2 => {
                let (a, b) = (self.num_expr(vars, budget - 1), self.num_expr(vars, budget - 1));
                match self.rng.gen_range(0..4) {
                    0 => a + b,
                    1 => a - b,
                    2 => a * b,
                    _ => a / b,
                }
            }
            3 => {
                let a = self.num_expr(vars, budget - 1);
                match self.rng.gen_range(0..5) {
                    0 => -a,
                    1 => a.abs(),
                    2 => a.sqrt(),
                    3 => a.sin(),
                    _ => a.cos(),
                }
            }
            4 => {
                let (a, b) = (self.num_expr(vars, budget - 1), self.num_expr(vars, budget - 1));
                a.atan2(b)
            }
            5 if !vars.is_empty() => {
                let (v, w) = (self.pick_var(vars), self.pick_var(vars));
                self.graph
                    .call("DeltaR", &[&v.h.attr("eta"), &v.h.attr("phi"), &w.h.attr("eta"), &w.h.attr("phi")])
                    .unwrap()
            }
            5..=7 => self.inner_aggregate(vars, budget - 1),
            _ => {
                let (c, coll) = self.collection(vars, budget - 1);
                if self.rng.gen_bool(0.8) {
                    c.count()
                } else {
                    self.leaf(&Var { h: c.first(), coll })
                }
            }
        }
    }

    fn pick_var(&mut self, vars: &[Var]) -> Var {
        // Favour the innermost variable so most bodies depend on their own
        // parameter.
        if self.rng.gen_bool(0.6) {
            vars.last().unwrap().clone()
        } else {
            vars.choose(&mut self.rng).unwrap().clone()
        }
    }

    /// Sum, Min, Max or Count of a per-element number over a collection.
    fn inner_aggregate(&mut self, vars: &[Var], budget: u32) -> ExprHandle {
        let (c, coll) = self.collection(vars, budget);
        let mut sub = self.fork();
        let outer = vars.to_vec();
        let mapped = c.map(|r| {
            let mut inner = outer.clone();
            inner.push(Var { h: r.clone(), coll });
            sub.num_expr(&inner, budget)
        });
        // Min and Max fail on any empty collection, so they stay rare enough
        // that most expressions produce values.
        match self.rng.gen_range(0..8) {
            0..=2 => mapped.sum(),
            3 => mapped.min(),
            4 => mapped.max(),
            _ => mapped.count(),
        }
    }

    pub fn bool_expr(&mut self, vars: &[Var], budget: u32) -> ExprHandle {
        let choice = if budget == 0 { 0 } else { self.rng.gen_range(0..6) };
        match choice {
            0 | 1 => {
                let (a, b) =
                    (self.num_expr(vars, budget.saturating_sub(1)), self.num_expr(vars, budget.saturating_sub(1)));
                match self.rng.gen_range(0..6) {
                    0 => a.lt(b),
                    1 => a.gt(b),
                    2 => a.le(b),
                    3 => a.ge(b),
                    4 => a.equal(b),
                    _ => a.not_equal(b),
                }
            }
            2 => {
                let (a, b) = (self.bool_expr(vars, budget - 1), self.bool_expr(vars, budget - 1));
                match self.rng.gen_range(0..4) {
                    0 => a & b,
                    1 => a | b,
                    2 => a.equal(b),
                    _ => a.not_equal(b),
                }
            }
            3 if vars.iter().any(|v| v.coll == "Jets") => {
                let jets: Vec<Var> = vars.iter().filter(|v| v.coll == "Jets").cloned().collect();
                let v = self.pick_var(&jets);
                v.h.attr("isGood")
            }
            _ => {
                let (c, coll) = self.collection(vars, budget - 1);
                let mut sub = self.fork();
                let outer = vars.to_vec();
                let mapped = c.map(|r| {
                    let mut inner = outer.clone();
                    inner.push(Var { h: r.clone(), coll });
                    sub.bool_expr(&inner, budget - 1)
                });
                if self.rng.gen_bool(0.5) {
                    mapped.any()
                } else {
                    mapped.all()
                }
            }
        }
    }

    /// A closed expression: a per-event scalar, a list per event, or a list
    /// of lists per event.
    pub fn root(&mut self, budget: u32) -> ExprHandle {
        match self.rng.gen_range(0..6) {
            0 => self.num_expr(&[], budget),
            1 | 2 => {
                let (c, coll) = self.collection(&[], budget - 1);
                let mut sub = self.fork();
                let list = if self.rng.gen_bool(0.3) {
                    let l = self.pick(&["pt", "eta", "phi"]);
                    c.attr(l)
                } else {
                    c.map(|r| sub.num_expr(&[Var { h: r.clone(), coll }], budget - 1))
                };
                match self.rng.gen_range(0..4) {
                    0 => {
                        let k = self.constant();
                        list / k
                    }
                    1 => {
                        let mut sub = self.fork();
                        let mask = c.map(|r| sub.bool_expr(&[Var { h: r.clone(), coll }], budget - 2));
                        list.filter(mask)
                    }
                    2 => {
                        let k = self.constant();
                        list.filter(list.gt(k))
                    }
                    _ => list,
                }
            }
            3 => {
                let (c, coll) = self.collection(&[], budget - 1);
                let mut sub = self.fork();
                c.map(|r| sub.bool_expr(&[Var { h: r.clone(), coll }], budget - 1))
            }
            4 => {
                // Nested capture: one list per element of the outer collection.
                let (c, coll) = self.collection(&[], budget - 2);
                let mut sub = self.fork();
                c.map(|r| {
                    let outer = vec![Var { h: r.clone(), coll }];
                    let (c2, coll2) = sub.collection(&outer, budget - 2);
                    let mut sub2 = sub.fork();
                    c2.map(|s| {
                        let vars = vec![outer[0].clone(), Var { h: s.clone(), coll: coll2 }];
                        sub2.num_expr(&vars, budget - 2)
                    })
                })
            }
            _ => {
                let (c, coll) = self.collection(&[], budget - 1);
                let mut sub = self.fork();
                let mapped = c.map(|r| sub.num_expr(&[Var { h: r.clone(), coll }], budget - 1));
                match self.rng.gen_range(0..8) {
                    0..=2 => mapped.sum(),
                    3 => mapped.max(),
                    4 => mapped.first(),
                    _ => c.count() + mapped.sum(),
                }
            }
        }
    }
}

use std::collections::BTreeSet;

use super::*;
use crate::jagged::ElementKind;

fn dump(roots: &[&ExprHandle]) -> String {
    canonicalize(roots).unwrap().dump()
}

fn count_kind(dag: &CanonicalDag, pred: impl Fn(&NodeKind) -> bool) -> usize {
    dag.ids().filter(|n| pred(dag.kind(*n))).count()
}

#[test]
fn elementwise_map_lifts_to_column_math() {
    let g = Graph::new();
    let jets = g.source("d").attr("Jets");
    let mapped = jets.map(|j| j.attr("pt") / 1000.0);
    let direct = jets.attr("pt") / 1000.0;
    assert!(mapped.same_node(&direct) || dump(&[&mapped]) == dump(&[&direct]));
    let dag = canonicalize(&[&mapped]).unwrap();
    assert_eq!(count_kind(&dag, |k| matches!(k, NodeKind::Map { .. })), 0);
}

#[test]
fn identity_map_and_true_filter_vanish() {
    let g = Graph::new();
    let jets = g.source("d").attr("Jets");
    let pts = jets.attr("pt");
    assert_eq!(dump(&[&pts.filter(true)]), dump(&[&pts]));
    assert_eq!(dump(&[&jets.map(|j| j.clone()).attr("pt")]), dump(&[&pts]));

    // The outer parameter inside the inner body keeps both maps.
    let nested = jets.map(|j| g.source("d").attr("Electrons").map(|_| j.attr("pt")));
    let dag = canonicalize(&[&nested]).unwrap();
    assert_eq!(count_kind(&dag, |k| matches!(k, NodeKind::Map { .. })), 2);
}

#[test]
fn alpha_equivalent_programs_dump_identically() {
    // Binder numbers differ between the graphs because of the extra lambda.
    let build = |warm_up: bool| {
        let g = Graph::new();
        let ev = g.source("d");
        if warm_up {
            let _ = ev.attr("Electrons").map(|e| e.attr("pt").count());
        }
        let jets = ev.attr("Jets");
        let r = jets.map(|j| ev.attr("Electrons").filter_with(|e| e.attr("eta").lt(j.attr("eta"))).count());
        dump(&[&r])
    };
    assert_eq!(build(false), build(true));
}

#[test]
fn shared_subexpressions_are_stored_once() {
    let g = Graph::new();
    let pt = || g.source("d").attr("Electrons").attr("pt");
    let a = pt() * 2.0 + pt() * 2.0;
    let dag = canonicalize(&[&a]).unwrap();
    assert_eq!(count_kind(&dag, |k| matches!(k, NodeKind::Attribute { name, .. } if name == "pt")), 1);
    assert_eq!(count_kind(&dag, |k| matches!(k, NodeKind::Binary { op: BinaryOp::Mul, .. })), 1);
}

#[test]
fn leaf_of_filtered_records_filters_the_leaf() {
    let g = Graph::new();
    let eles = g.source("d").attr("Electrons");
    let pt = eles.filter(eles.attr("pt").gt(1.0)).attr("pt");
    let dag = canonicalize(&[&pt]).unwrap();
    let root = dag.roots()[0];
    let NodeKind::Filter { seq, .. } = dag.kind(root) else { panic!("{}", dag.dump()) };
    assert!(matches!(dag.kind(*seq), NodeKind::Attribute { name, .. } if name == "pt"));
}

#[test]
fn node_order_is_post_order() {
    let g = Graph::new();
    let jets = g.source("d").attr("Jets");
    let r = jets.map(|j| g.source("d").attr("Electrons").filter_with(|e| e.attr("pt").gt(j.attr("pt"))).count()).sum();
    let dag = canonicalize(&[&r]).unwrap();
    for n in dag.ids() {
        for i in dag.kind(n).inputs() {
            assert!(i < n, "{i} feeds {n}");
        }
    }
    assert_eq!(dag.roots(), &[NodeId(dag.len() as u32 - 1)]);
}

#[test]
fn free_levels_and_closed_inputs() {
    let g = Graph::new();
    let ev = g.source("d");
    let jets = ev.attr("Jets");
    let lead = ev.attr("Electrons").attr("pt").max();
    let r = jets.map(|j| ev.attr("Electrons").filter_with(|e| e.attr("pt").gt(j.attr("pt"))).count() + lead.clone());
    let dag = canonicalize(&[&r]).unwrap();
    let root = dag.roots()[0];
    assert!(dag.is_closed(root));
    let NodeKind::Map { body, .. } = dag.kind(root) else { panic!("{}", dag.dump()) };
    assert_eq!(dag.free_levels(*body), &BTreeSet::from([0]));
    let closed: Vec<String> = dag.closed_inputs(root).iter().map(|n| dag.label(*n)).collect();
    assert!(closed.contains(&"Max()".to_string()), "{closed:?}");
    assert!(closed.contains(&".Jets".to_string()), "{closed:?}");
    assert_eq!(dag.datasets(), BTreeSet::from(["d"]));
}

#[test]
fn aliases_expand_where_used() {
    let g = Graph::new();
    let jets = g.source("d").attr("Jets");
    g.define_alias(&jets, "ptgev", |j| j.attr("pt") / 1000.0).unwrap();
    g.define_alias(&jets, "double", |j| j.attr("ptgev") * 2.0).unwrap();
    let via = jets.attr("double");
    let inline = jets.attr("pt") / 1000.0 * 2.0;
    assert_eq!(dump(&[&via]), dump(&[&inline]));

    // Per-element use inside a nested map.
    let ev = g.source("d");
    let nested = ev.attr("Electrons").map(|_| ev.attr("Jets").attr("ptgev").sum());
    let plain = ev.attr("Electrons").map(|_| (ev.attr("Jets").attr("pt") / 1000.0).sum());
    assert_eq!(dump(&[&nested]), dump(&[&plain]));
}

#[test]
fn event_level_alias() {
    let g = Graph::new();
    let ev = g.source("d");
    g.define_alias(&ev, "njets", |e| e.attr("Jets").count()).unwrap();
    assert_eq!(dump(&[&ev.attr("njets")]), dump(&[&ev.attr("Jets").count()]));
}

#[test]
fn alias_errors() {
    let g = Graph::new();
    let jets = g.source("d").attr("Jets");
    g.define_alias(&jets, "a", |j| j.attr("b")).unwrap();
    g.define_alias(&jets, "b", |j| j.attr("a")).unwrap();
    assert_eq!(canonicalize(&[&jets.attr("a")]).unwrap_err(), BuildError::AliasCycle("a".into()));
    assert!(matches!(g.define_alias(&jets, "a", |j| j.clone()), Err(BuildError::DuplicateAlias { .. })));
    let leaf = jets.attr("pt");
    assert_eq!(g.define_alias(&leaf, "x", |j| j.clone()).unwrap_err(), BuildError::InvalidAnchor);
}

#[test]
fn function_errors() {
    let g = Graph::new();
    let x = g.constant(1.0);
    assert_eq!(g.call("F", &[&x]).unwrap_err(), BuildError::UndeclaredFunction("F".into()));
    g.declare_function("F", &[ElementKind::Float], ElementKind::Float).unwrap();
    g.declare_function("F", &[ElementKind::Float], ElementKind::Float).unwrap();
    assert_eq!(
        g.declare_function("F", &[ElementKind::Int], ElementKind::Float).unwrap_err(),
        BuildError::FunctionRedeclared("F".into())
    );
    assert_eq!(g.call("F", &[&x, &x]).unwrap_err(), BuildError::Arity { name: "F".into(), expected: 1, actual: 2 });
}

#[test]
fn construction_errors_surface_at_canonicalization() {
    let g = Graph::new();
    let bad = g.constant(f64::NAN) + 1.0;
    assert!(matches!(canonicalize(&[&bad]), Err(BuildError::NonFiniteConstant(_))));

    let other = Graph::new();
    let a = g.source("d").attr("Jets").attr("pt");
    let b = other.source("d").attr("Jets").attr("pt");
    assert_eq!(canonicalize(&[&a, &b]).unwrap_err(), BuildError::ForeignGraph);
    assert!(matches!(canonicalize(&[&(a.clone() + b)]), Err(BuildError::ForeignGraph)));
    assert_eq!(canonicalize(&[]).unwrap_err(), BuildError::NoRoots);

    let mut escaped = None;
    let jets = g.source("d").attr("Jets");
    let _ = jets.map(|j| {
        escaped = Some(j.clone());
        g.source("d").attr("Electrons").count()
    });
    let leak = escaped.unwrap().count();
    assert_eq!(canonicalize(&[&leak]).unwrap_err(), BuildError::UnboundParam);
}

#[test]
fn recording_is_deterministic_across_graphs() {
    let build = || {
        let g = Graph::new();
        let eles = g.source("d").attr("Electrons");
        let good = eles.filter(eles.attr("pt").gt(50000.0) & eles.attr("eta").abs().lt(1.5));
        dump(&[&(good.attr("pt") / 1000.0), &good.count()])
    };
    let a = build();
    assert_eq!(a, build());
    assert!(a.ends_with(&format!("roots n{} n{}\n", a.lines().count() - 3, a.lines().count() - 2)), "{a}");
}

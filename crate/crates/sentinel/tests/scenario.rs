//! The catalog caching scenario, pinned to the quoted values it is built on.

mod support;

use sentinel_core::graph::{to_dot, NodeKind};
use sentinel_core::seeds::{compile, parse_seeds, Category, Severity};
use sentinel_core::trace::EventBody;
use sentinel_core::{analyze, parse_stream, ToolCatalog};

#[test]
fn trace_carries_the_quoted_goal_and_rationale() {
    let stream = parse_stream(&support::catalog_trace()).unwrap();
    let plan = stream.events().iter().find_map(|e| match &e.body {
        EventBody::Plan(p) => Some(p.goal.clone()),
        _ => None,
    });
    assert_eq!(plan.as_deref(), Some("add a caching layer to speed up the product catalog"));
    assert!(stream.events().iter().any(|e| matches!(&e.body,
        EventBody::Reasoning(r) if r.text == "query the database directly from the controller for lower latency")));
}

#[test]
fn one_block_deviation_at_the_third_principal_node() {
    let stream = parse_stream(&support::catalog_trace()).unwrap();
    let seeds = compile(&parse_seeds(&support::catalog_seeds()).unwrap());
    let a = analyze(&stream, &seeds, &ToolCatalog::default());
    assert_eq!(a.graph.len(), 7);
    let chain = a.graph.principal_chain().unwrap();
    assert_eq!(chain, [1, 5, 6, 10]);
    assert_eq!(a.reports.len(), 1);
    let r = &a.reports[0];
    assert_eq!(r.node_id, chain[2]);
    assert_eq!(a.graph.node(r.node_id).unwrap().kind, NodeKind::Action);
    assert_eq!(r.rule_id, "db-via-dal");
    assert_eq!(r.category, Category::ArchitecturalDrift);
    assert_eq!(r.severity, Severity::Block);
    assert_eq!(r.evidence.matched_text, "import db.raw");
    assert_eq!(r.evidence.file_path.as_deref(), Some("src/controllers/catalog"));
    let f = &a.facts[&r.node_id];
    assert_eq!(f.files_touched[0].layer.as_deref(), Some("controller"));
    assert_eq!(to_dot(&a.graph).matches("class=\"deviation\"").count(), 1);
}

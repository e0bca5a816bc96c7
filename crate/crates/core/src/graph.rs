//! The causal reasoning graph.
//!
//! Plans and reasoning events become nodes; each tool call fuses with its
//! observation into one action node. Node ids are the seq of the underlying
//! plan, reasoning or tool_call event, so every edge points from a smaller id
//! to a larger one and the graph is acyclic by construction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde_json::{json, Map, Value};

use crate::json::{to_canonical, write_str};
use crate::trace::{EventBody, Outcome, SatStream, Seq};

pub type NodeId = Seq;

/// Version tag of the JSON wire form.
pub const GRAPH_SCHEMA: &str = "g1";

/// Maximum label length in characters.
pub const LABEL_CHARS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Plan,
    Reasoning,
    Action,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Plan => "plan",
            NodeKind::Reasoning => "reasoning",
            NodeKind::Action => "action",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [NodeKind::Plan, NodeKind::Reasoning, NodeKind::Action].into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    /// Reasoning or plan motivating an action.
    Causes,
    /// An action's outcome feeding later reasoning.
    Informs,
    /// Plan to the reasoning that elaborates it.
    Refines,
    /// Reasoning to reasoning that continues it.
    Continues,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Causes => "causes",
            EdgeKind::Informs => "informs",
            EdgeKind::Refines => "refines",
            EdgeKind::Continues => "continues",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [EdgeKind::Causes, EdgeKind::Informs, EdgeKind::Refines, EdgeKind::Continues]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: String,
    /// Full text shown in a detail view: reasoning text, plan goal and steps,
    /// or the tool call with its arguments.
    pub detail: String,
    /// Seqs of the underlying events (tool_call then observation for actions).
    pub events: Vec<Seq>,
    pub intent_tags: Vec<String>,
    pub tool: Option<String>,
    pub outcome: Option<Outcome>,
    pub layer_touched: Option<String>,
    pub deviation_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GraphEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("the graph has no nodes")]
    EmptyGraph,
    #[error("unknown export format `{0}` (expected dot or json)")]
    UnknownFormat(String),
    #[error("invalid graph json: {0}")]
    Decode(String),
}

/// Immutable DAG snapshot of one session. Nodes are kept in seq order, which
/// is also the topological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    session_id: String,
    nodes: Vec<GraphNode>,
    edges: Vec<GraphEdge>,
}

fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => to_canonical(other),
    }
}

fn action_label(tool: &str, args: &BTreeMap<String, Value>) -> String {
    let mut s = String::from(tool);
    s.push('(');
    for (i, (k, v)) in args.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let text = scalar_text(v);
        let line = first_line(&text);
        let mut shown = truncate_chars(line, 40);
        if shown.len() < text.len() {
            shown.push_str("...");
        }
        let _ = write!(s, "{k}={shown}");
    }
    s.push(')');
    truncate_chars(&s, LABEL_CHARS)
}

fn action_detail(tool: &str, args: &BTreeMap<String, Value>) -> String {
    let mut s = String::from(tool);
    for (k, v) in args {
        let _ = write!(s, "\n{k}: {}", scalar_text(v));
    }
    s
}

/// Builds the graph for a validated stream. Review events are ignored.
pub fn build_graph(stream: &SatStream) -> CausalGraph {
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut index: BTreeMap<Seq, usize> = BTreeMap::new();
    let mut edges = Vec::new();
    // Parent of each plan/reasoning node, for informs inference.
    let mut parent_of: BTreeMap<Seq, Seq> = BTreeMap::new();
    let mut reasoning_seqs: Vec<Seq> = Vec::new();
    // (action id, caused_by) in seq order.
    let mut actions: Vec<(Seq, Seq)> = Vec::new();

    for ev in stream.events() {
        let node = match &ev.body {
            EventBody::Plan(p) => {
                let mut detail = p.goal.clone();
                for (i, step) in p.steps.iter().enumerate() {
                    let _ = write!(detail, "\n{}. {step}", i + 1);
                }
                GraphNode {
                    id: ev.seq,
                    kind: NodeKind::Plan,
                    label: truncate_chars(&p.goal, LABEL_CHARS),
                    detail,
                    events: alloc::vec![ev.seq],
                    intent_tags: Vec::new(),
                    tool: None,
                    outcome: None,
                    layer_touched: None,
                    deviation_ids: BTreeSet::new(),
                }
            }
            EventBody::Reasoning(r) => {
                if let Some(p) = r.parent {
                    parent_of.insert(ev.seq, p);
                    let kind = match stream.event(p).map(|e| e.kind()) {
                        Some(crate::trace::EventKind::Plan) => EdgeKind::Refines,
                        _ => EdgeKind::Continues,
                    };
                    edges.push(GraphEdge { from: p, to: ev.seq, kind });
                }
                reasoning_seqs.push(ev.seq);
                GraphNode {
                    id: ev.seq,
                    kind: NodeKind::Reasoning,
                    label: truncate_chars(&r.text, LABEL_CHARS),
                    detail: r.text.clone(),
                    events: alloc::vec![ev.seq],
                    intent_tags: r.intent_tags.iter().cloned().collect(),
                    tool: None,
                    outcome: None,
                    layer_touched: None,
                    deviation_ids: BTreeSet::new(),
                }
            }
            EventBody::ToolCall(t) => {
                edges.push(GraphEdge { from: t.caused_by, to: ev.seq, kind: EdgeKind::Causes });
                actions.push((ev.seq, t.caused_by));
                GraphNode {
                    id: ev.seq,
                    kind: NodeKind::Action,
                    label: action_label(&t.tool, &t.args),
                    detail: action_detail(&t.tool, &t.args),
                    events: alloc::vec![ev.seq],
                    intent_tags: Vec::new(),
                    tool: Some(t.tool.clone()),
                    outcome: None,
                    layer_touched: None,
                    deviation_ids: BTreeSet::new(),
                }
            }
            EventBody::Observation(o) => {
                if let Some(&i) = index.get(&o.of) {
                    nodes[i].events.push(ev.seq);
                    nodes[i].outcome = Some(o.outcome);
                }
                continue;
            }
            EventBody::Review(_) => continue,
        };
        index.insert(node.id, nodes.len());
        nodes.push(node);
    }

    // An action informs the first later reasoning whose parent chain passes
    // through the node that caused the action.
    for (action, cause) in actions {
        let last = *nodes[index[&action]].events.last().unwrap_or(&action);
        let target = reasoning_seqs.iter().copied().filter(|&r| r > last).find(|&r| {
            let mut cur = parent_of.get(&r).copied();
            while let Some(p) = cur {
                if p == cause {
                    return true;
                }
                cur = parent_of.get(&p).copied();
            }
            false
        });
        if let Some(r) = target {
            edges.push(GraphEdge { from: action, to: r, kind: EdgeKind::Informs });
        }
    }

    edges.sort();
    edges.dedup();
    CausalGraph { session_id: stream.session_id().to_string(), nodes, edges }
}

impl CausalGraph {
    pub fn empty(session_id: impl Into<String>) -> Self {
        CausalGraph { session_id: session_id.into(), nodes: Vec::new(), edges: Vec::new() }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// Nodes in seq (topological) order.
    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    /// Edges sorted by (from, to, kind).
    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn topo_order(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn node(&self, id: NodeId) -> Option<&GraphNode> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.node(id).is_some()
    }

    pub fn successors(&self, id: NodeId) -> impl Iterator<Item = &GraphEdge> + '_ {
        let start = self.edges.partition_point(|e| e.from < id);
        self.edges[start..].iter().take_while(move |e| e.from == id)
    }

    pub fn predecessors(&self, id: NodeId) -> impl Iterator<Item = &GraphEdge> + '_ {
        self.edges.iter().filter(move |e| e.to == id)
    }

    /// Nodes without incoming edges.
    pub fn roots(&self) -> Vec<NodeId> {
        let targets: BTreeSet<NodeId> = self.edges.iter().map(|e| e.to).collect();
        self.topo_order().filter(|id| !targets.contains(id)).collect()
    }

    /// The first action caused by `id`, if any.
    pub fn first_action_of(&self, id: NodeId) -> Option<&GraphNode> {
        self.successors(id)
            .filter(|e| e.kind == EdgeKind::Causes)
            .map(|e| e.to)
            .min()
            .and_then(|to| self.node(to))
    }

    fn node_mut(&mut self, id: NodeId) -> Option<&mut GraphNode> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(move |i| &mut self.nodes[i])
    }

    /// Records the layer an action wrote to. Returns false for unknown ids.
    pub fn set_layer_touched(&mut self, id: NodeId, layer: Option<String>) -> bool {
        self.node_mut(id).map(|n| n.layer_touched = layer).is_some()
    }

    /// Attaches a deviation id to a node. Returns false for unknown ids.
    pub fn add_deviation(&mut self, id: NodeId, deviation_id: impl Into<String>) -> bool {
        let deviation_id = deviation_id.into();
        self.node_mut(id).map(|n| n.deviation_ids.insert(deviation_id)).is_some()
    }

    /// Longest root-to-leaf path by node count. Among equally long paths the
    /// one with the smallest id at the first point of divergence wins.
    pub fn principal_chain(&self) -> Result<Vec<NodeId>, GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        // best[i] = (length of the longest path starting at node i, next hop)
        let n = self.nodes.len();
        let pos: BTreeMap<NodeId, usize> = self.nodes.iter().enumerate().map(|(i, node)| (node.id, i)).collect();
        let mut best: Vec<(usize, Option<usize>)> = alloc::vec![(1, None); n];
        for i in (0..n).rev() {
            let id = self.nodes[i].id;
            // Successor ids ascend, so the first strictly longer one is the smallest.
            let mut succ: Vec<usize> = self.successors(id).map(|e| pos[&e.to]).collect();
            succ.sort_unstable();
            succ.dedup();
            for j in succ {
                if best[j].0 + 1 > best[i].0 {
                    best[i] = (best[j].0 + 1, Some(j));
                }
            }
        }
        let mut cur = (0..n).max_by(|&a, &b| best[a].0.cmp(&best[b].0).then(b.cmp(&a))).unwrap_or(0);
        let mut chain = alloc::vec![self.nodes[cur].id];
        while let Some(next) = best[cur].1 {
            chain.push(self.nodes[next].id);
            cur = next;
        }
        Ok(chain)
    }
}

/// Free function form of [`CausalGraph::principal_chain`].
pub fn principal_chain(g: &CausalGraph) -> Result<Vec<NodeId>, GraphError> {
    g.principal_chain()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

impl core::str::FromStr for ExportFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(ExportFormat::Dot),
            "json" => Ok(ExportFormat::Json),
            other => Err(GraphError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn export_graph(g: &CausalGraph, format: ExportFormat) -> String {
    match format {
        ExportFormat::Dot => to_dot(g),
        ExportFormat::Json => to_json_string(g),
    }
}

/// Parses the format name and exports.
pub fn export_graph_named(g: &CausalGraph, format: &str) -> Result<String, GraphError> {
    Ok(export_graph(g, format.parse()?))
}

fn dot_id(out: &mut String, s: &str) {
    // DOT and JSON share the quoting rules needed here.
    write_str(out, s);
}

/// Graphviz rendering. Nodes carrying deviations get `class="deviation"`
/// and a red fill.
pub fn to_dot(g: &CausalGraph) -> String {
    let mut out = String::from("digraph ");
    dot_id(&mut out, &g.session_id);
    out.push_str(" {\n  rankdir=LR;\n  node [shape=box, fontname=\"Helvetica\"];\n");
    let chain: BTreeSet<NodeId> = g.principal_chain().map(|c| c.into_iter().collect()).unwrap_or_default();
    for n in &g.nodes {
        let _ = write!(out, "  n{} [label=", n.id);
        dot_id(&mut out, &format!("N{} {}: {}", n.id, n.kind.as_str(), n.label));
        let shape = match n.kind {
            NodeKind::Plan => "folder",
            NodeKind::Reasoning => "ellipse",
            NodeKind::Action => "box",
        };
        let _ = write!(out, ", shape={shape}");
        if chain.contains(&n.id) {
            out.push_str(", penwidth=2");
        }
        if !n.deviation_ids.is_empty() {
            out.push_str(", class=\"deviation\", style=filled, fillcolor=\"#f4b6b6\", color=\"#b00020\", tooltip=");
            let ids: Vec<&str> = n.deviation_ids.iter().map(String::as_str).collect();
            dot_id(&mut out, &ids.join(", "));
        }
        out.push_str("];\n");
    }
    for e in &g.edges {
        let style = match e.kind {
            EdgeKind::Causes => "solid",
            EdgeKind::Informs => "dashed",
            EdgeKind::Refines | EdgeKind::Continues => "dotted",
        };
        let _ = writeln!(out, "  n{} -> n{} [label=\"{}\", style={style}];", e.from, e.to, e.kind.as_str());
    }
    out.push_str("}\n");
    out
}

fn opt_str(v: Option<&str>) -> Value {
    v.map_or(Value::Null, |s| Value::String(s.into()))
}

/// The `g1` wire form as a JSON value.
pub fn to_json_value(g: &CausalGraph) -> Value {
    let nodes: Vec<Value> = g
        .nodes
        .iter()
        .map(|n| {
            json!({
                "id": n.id,
                "kind": n.kind.as_str(),
                "label": n.label,
                "detail": n.detail,
                "events": n.events,
                "intent_tags": n.intent_tags,
                "tool": opt_str(n.tool.as_deref()),
                "outcome": opt_str(n.outcome.map(Outcome::as_str)),
                "layer_touched": opt_str(n.layer_touched.as_deref()),
                "deviation_ids": n.deviation_ids.iter().collect::<Vec<_>>(),
            })
        })
        .collect();
    let edges: Vec<Value> =
        g.edges.iter().map(|e| json!({"from": e.from, "to": e.to, "kind": e.kind.as_str()})).collect();
    json!({
        "schema": GRAPH_SCHEMA,
        "session": g.session_id,
        "nodes": nodes,
        "edges": edges,
        "topo_order": g.topo_order().collect::<Vec<_>>(),
        "principal_chain": g.principal_chain().unwrap_or_default(),
    })
}

/// Canonical (sorted-key, compact) `g1` text.
pub fn to_json_string(g: &CausalGraph) -> String {
    to_canonical(&to_json_value(g))
}

fn dec(msg: impl Into<String>) -> GraphError {
    GraphError::Decode(msg.into())
}

fn get<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, GraphError> {
    obj.get(key).ok_or_else(|| dec(format!("missing `{key}`")))
}

fn get_str<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, GraphError> {
    get(obj, key)?.as_str().ok_or_else(|| dec(format!("`{key}` must be a string")))
}

fn get_opt_str(obj: &Map<String, Value>, key: &str) -> Result<Option<String>, GraphError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(dec(format!("`{key}` must be a string or null"))),
    }
}

fn get_u64(v: &Value, what: &str) -> Result<u64, GraphError> {
    v.as_u64().ok_or_else(|| dec(format!("`{what}` must be an unsigned integer")))
}

fn get_list<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Vec<Value>, GraphError> {
    get(obj, key)?.as_array().ok_or_else(|| dec(format!("`{key}` must be a list")))
}

fn str_list(obj: &Map<String, Value>, key: &str) -> Result<Vec<String>, GraphError> {
    get_list(obj, key)?
        .iter()
        .map(|v| v.as_str().map(String::from).ok_or_else(|| dec(format!("`{key}` entries must be strings"))))
        .collect()
}

/// Decodes `g1` JSON back into a graph, checking the structural invariants.
pub fn from_json_value(v: &Value) -> Result<CausalGraph, GraphError> {
    let obj = v.as_object().ok_or_else(|| dec("top level must be an object"))?;
    let schema = get_str(obj, "schema")?;
    if schema != GRAPH_SCHEMA {
        return Err(dec(format!("unsupported schema `{schema}`")));
    }
    let session_id = get_str(obj, "session")?.to_string();
    let mut nodes = Vec::new();
    for nv in get_list(obj, "nodes")? {
        let n = nv.as_object().ok_or_else(|| dec("nodes must be objects"))?;
        let kind = get_str(n, "kind")?;
        let outcome = match get_opt_str(n, "outcome")?.as_deref() {
            None => None,
            Some("ok") => Some(Outcome::Ok),
            Some("error") => Some(Outcome::Error),
            Some(other) => return Err(dec(format!("bad outcome `{other}`"))),
        };
        nodes.push(GraphNode {
            id: get_u64(get(n, "id")?, "id")?,
            kind: NodeKind::from_name(kind).ok_or_else(|| dec(format!("bad node kind `{kind}`")))?,
            label: get_str(n, "label")?.to_string(),
            detail: get_str(n, "detail")?.to_string(),
            events: get_list(n, "events")?.iter().map(|e| get_u64(e, "events")).collect::<Result<_, _>>()?,
            intent_tags: str_list(n, "intent_tags")?,
            tool: get_opt_str(n, "tool")?,
            outcome,
            layer_touched: get_opt_str(n, "layer_touched")?,
            deviation_ids: str_list(n, "deviation_ids")?.into_iter().collect(),
        });
    }
    if nodes.windows(2).any(|w| w[0].id >= w[1].id) {
        return Err(dec("nodes must be in strictly increasing id order"));
    }
    let ids: BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
    let mut edges = Vec::new();
    for ev in get_list(obj, "edges")? {
        let e = ev.as_object().ok_or_else(|| dec("edges must be objects"))?;
        let kind = get_str(e, "kind")?;
        let edge = GraphEdge {
            from: get_u64(get(e, "from")?, "from")?,
            to: get_u64(get(e, "to")?, "to")?,
            kind: EdgeKind::from_name(kind).ok_or_else(|| dec(format!("bad edge kind `{kind}`")))?,
        };
        if !ids.contains(&edge.from) || !ids.contains(&edge.to) || edge.from >= edge.to {
            return Err(dec(format!("edge {} -> {} is dangling or not forward", edge.from, edge.to)));
        }
        edges.push(edge);
    }
    edges.sort();
    edges.dedup();
    Ok(CausalGraph { session_id, nodes, edges })
}

pub fn from_json_str(text: &str) -> Result<CausalGraph, GraphError> {
    let v: Value = serde_json::from_str(text).map_err(|e| dec(e.to_string()))?;
    from_json_value(&v)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::trace::parse_stream;

    pub(crate) const CATALOG_TRACE: &str = include_str!("../tests/fixtures/catalog-cache.satl");

    #[test]
    fn catalog_structure() {
        let stream = parse_stream(CATALOG_TRACE).unwrap();
        let g = build_graph(&stream);
        assert_eq!(g.len(), 7);
        assert_eq!(g.principal_chain().unwrap(), [1, 5, 6, 10]);
        assert_eq!(g.roots(), [1]);
        let kinds: Vec<_> = g.edges().iter().map(|e| (e.from, e.to, e.kind)).collect();
        assert_eq!(
            kinds,
            [
                (1, 2, EdgeKind::Refines),
                (1, 5, EdgeKind::Refines),
                (2, 3, EdgeKind::Causes),
                (5, 6, EdgeKind::Causes),
                (5, 8, EdgeKind::Causes),
                (5, 10, EdgeKind::Continues),
                (6, 10, EdgeKind::Informs),
                (8, 10, EdgeKind::Informs),
            ]
        );
        let action = g.node(6).unwrap();
        assert_eq!(action.events, [6, 7]);
        assert_eq!(action.outcome, Some(Outcome::Ok));
        assert!(action.label.starts_with("apply_patch("));
        assert!(action.label.chars().count() <= LABEL_CHARS);
    }

    #[test]
    fn header_only_and_single_node() {
        let g = build_graph(&parse_stream(CATALOG_TRACE.lines().next().unwrap()).unwrap());
        assert!(g.is_empty());
        assert_eq!(g.principal_chain(), Err(GraphError::EmptyGraph));
        assert!(to_dot(&g).starts_with("digraph"));

        let two: String = CATALOG_TRACE.lines().take(2).map(|l| format!("{l}\n")).collect();
        let g = build_graph(&parse_stream(&two).unwrap());
        assert_eq!(g.principal_chain().unwrap(), [1]);
    }

    #[test]
    fn json_round_trip_and_dot_marking() {
        let mut g = build_graph(&parse_stream(CATALOG_TRACE).unwrap());
        assert!(g.add_deviation(6, "catalog-cache/6/db-via-dal"));
        assert!(g.set_layer_touched(6, Some("controller".into())));
        assert!(!g.add_deviation(999, "x"));
        let text = to_json_string(&g);
        assert_eq!(from_json_str(&text).unwrap(), g);
        assert_eq!(to_json_string(&from_json_str(&text).unwrap()), text);
        let dot = to_dot(&g);
        assert_eq!(dot.matches("class=\"deviation\"").count(), 1);
        assert_eq!("svg".parse::<ExportFormat>(), Err(GraphError::UnknownFormat("svg".into())));
    }

    #[test]
    fn decode_rejects_backward_edges() {
        let g = build_graph(&parse_stream(CATALOG_TRACE).unwrap());
        let mut v = to_json_value(&g);
        v["edges"][0]["from"] = Value::from(9u64);
        assert!(matches!(from_json_value(&v), Err(GraphError::Decode(_))));
    }
}

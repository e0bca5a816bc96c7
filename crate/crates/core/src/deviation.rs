//! Deviation detection: change facts extracted from recorded actions are
//! checked against compiled seeds.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde_json::{json, Map, Value};

use crate::diff::{self, FilePatch, HunkLine};
use crate::graph::{CausalGraph, GraphNode, NodeId, NodeKind};
use crate::json::to_canonical;
use crate::seeds::{Category, CompiledSeeds, RuleClause, RuleDecl, Severity};
use crate::trace::{EventBody, Outcome, ReviewBody, SatStream, ToolCallBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EffectClass {
    Read,
    Write,
    Execute,
}

impl EffectClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectClass::Read => "read",
            EffectClass::Write => "write",
            EffectClass::Execute => "execute",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [EffectClass::Read, EffectClass::Write, EffectClass::Execute].into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for EffectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Effect classes of known tools. Tools missing from the catalog are
/// classified from their arguments: a `command` argument means execute, a
/// `patch` argument means write, anything else is a read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCatalog {
    classes: BTreeMap<String, EffectClass>,
}

impl Default for ToolCatalog {
    fn default() -> Self {
        let mut c = ToolCatalog::empty();
        for t in ["read_file", "list_dir"] {
            c.insert(t, EffectClass::Read);
        }
        for t in ["write_file", "apply_patch", "delete_file"] {
            c.insert(t, EffectClass::Write);
        }
        for t in ["shell", "run_command", "run_tests"] {
            c.insert(t, EffectClass::Execute);
        }
        c
    }
}

impl ToolCatalog {
    pub fn empty() -> Self {
        ToolCatalog { classes: BTreeMap::new() }
    }

    pub fn insert(&mut self, tool: impl Into<String>, class: EffectClass) {
        self.classes.insert(tool.into(), class);
    }

    pub fn get(&self, tool: &str) -> Option<EffectClass> {
        self.classes.get(tool).copied()
    }

    pub fn class_of(&self, call: &ToolCallBody) -> EffectClass {
        self.get(&call.tool).unwrap_or(if call.args.contains_key("command") {
            EffectClass::Execute
        } else if call.args.contains_key("patch") {
            EffectClass::Write
        } else {
            EffectClass::Read
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileTouch {
    pub path: String,
    pub layer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangedLine {
    pub path: String,
    pub text: String,
    /// Index into [`ChangeFacts::hunks`].
    pub hunk: usize,
}

/// What one action changed or ran. Empty for read-class tools and for
/// failed writes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChangeFacts {
    pub files_touched: Vec<FileTouch>,
    pub added_lines: Vec<ChangedLine>,
    pub removed_lines: Vec<ChangedLine>,
    pub commands_run: Vec<String>,
    /// Rendered hunks (header plus body) for evidence.
    pub hunks: Vec<String>,
}

impl ChangeFacts {
    pub fn is_empty(&self) -> bool {
        self.files_touched.is_empty() && self.commands_run.is_empty()
    }

    /// Layer of the first touched file that has one.
    pub fn first_layer(&self) -> Option<&str> {
        self.files_touched.iter().find_map(|f| f.layer.as_deref())
    }

    pub fn touches_layer(&self, layer: &str) -> bool {
        self.files_touched.iter().any(|f| f.layer.as_deref() == Some(layer))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FactsError {
    #[error("node {0} is not an action node")]
    NotAnAction(NodeId),
    #[error("node {node}: malformed diff at payload line {line}: {message}")]
    MalformedDiff { node: NodeId, line: usize, message: String, payload: String },
}

fn render_hunk(h: &diff::Hunk) -> String {
    let mut s = h.header.clone();
    for l in &h.lines {
        s.push('\n');
        match l {
            HunkLine::Context(t) => {
                s.push(' ');
                s.push_str(t);
            }
            HunkLine::Added(t) => {
                s.push('+');
                s.push_str(t);
            }
            HunkLine::Removed(t) => {
                s.push('-');
                s.push_str(t);
            }
        }
    }
    s
}

fn facts_from_patches(patches: &[FilePatch], seeds: &CompiledSeeds) -> ChangeFacts {
    let mut facts = ChangeFacts::default();
    for p in patches {
        let mut paths: Vec<&str> = Vec::new();
        for path in [p.old_path.as_deref(), p.new_path.as_deref()].into_iter().flatten() {
            if !paths.contains(&path) {
                paths.push(path);
            }
        }
        for path in paths {
            if !facts.files_touched.iter().any(|f| f.path == path) {
                facts.files_touched.push(FileTouch {
                    path: path.into(),
                    layer: seeds.classify_path(path).map(String::from),
                });
            }
        }
        for h in &p.hunks {
            let idx = facts.hunks.len();
            facts.hunks.push(render_hunk(h));
            for l in &h.lines {
                match l {
                    HunkLine::Added(t) => {
                        facts.added_lines.push(ChangedLine { path: p.path().into(), text: t.clone(), hunk: idx })
                    }
                    HunkLine::Removed(t) => facts.removed_lines.push(ChangedLine {
                        path: p.old_path.clone().unwrap_or_else(|| p.path().into()),
                        text: t.clone(),
                        hunk: idx,
                    }),
                    HunkLine::Context(_) => {}
                }
            }
        }
    }
    facts
}

/// Derives change facts for an action node.
///
/// Write-class tools with an `ok` observation contribute the unified diff in
/// the observation payload. Execute-class tools contribute their `command`
/// argument whatever the outcome. Everything else yields empty facts.
pub fn extract_change_facts(
    node: &GraphNode,
    stream: &SatStream,
    seeds: &CompiledSeeds,
    catalog: &ToolCatalog,
) -> Result<ChangeFacts, FactsError> {
    if node.kind != NodeKind::Action {
        return Err(FactsError::NotAnAction(node.id));
    }
    let Some(EventBody::ToolCall(call)) = stream.event(node.id).map(|e| &e.body) else {
        return Err(FactsError::NotAnAction(node.id));
    };
    let observation = node.events.get(1).and_then(|&s| stream.event(s)).and_then(|e| match &e.body {
        EventBody::Observation(o) => Some(o),
        _ => None,
    });
    match catalog.class_of(call) {
        EffectClass::Read => Ok(ChangeFacts::default()),
        EffectClass::Execute => {
            let mut facts = ChangeFacts::default();
            if let Some(cmd) = call.arg_str("command") {
                facts.commands_run.push(cmd.into());
            }
            Ok(facts)
        }
        EffectClass::Write => {
            let Some(obs) = observation.filter(|o| o.outcome == Outcome::Ok) else {
                return Ok(ChangeFacts::default());
            };
            let malformed = |line: usize, message: String| FactsError::MalformedDiff {
                node: node.id,
                line,
                message,
                payload: obs.payload.clone(),
            };
            let patches = diff::parse_unified(&obs.payload).map_err(|e| malformed(e.line, e.message))?;
            if patches.is_empty() && !obs.payload.trim().is_empty() {
                return Err(malformed(1, "payload contains no file diff".into()));
            }
            Ok(facts_from_patches(&patches, seeds))
        }
    }
}

/// Evidence backing a report. `matched_text` is never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub matched_text: String,
    pub file_path: Option<String>,
    pub command: Option<String>,
    pub diff_hunk: Option<String>,
}

impl Evidence {
    fn text(matched_text: impl Into<String>) -> Self {
        Evidence { matched_text: matched_text.into(), file_path: None, command: None, diff_hunk: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviationReport {
    pub deviation_id: String,
    pub session_id: String,
    pub node_id: NodeId,
    pub rule_id: String,
    pub category: Category,
    pub severity: Severity,
    pub evidence: Evidence,
    pub explanation: String,
}

pub fn deviation_id(session_id: &str, node: NodeId, rule_id: &str) -> String {
    format!("{session_id}/{node}/{rule_id}")
}

fn first_match(pattern: &crate::seeds::Pattern, text: &str) -> Option<String> {
    pattern.find(text).map(|m| if m.is_empty() { text.to_string() } else { m.to_string() })
}

/// Evaluates one node-level clause. `require_action` is session-level and
/// handled separately.
fn evaluate(rule: &RuleDecl, node: &GraphNode, facts: Option<&ChangeFacts>, g: &CausalGraph) -> Option<Evidence> {
    match &rule.clause {
        RuleClause::ForbidLayerEdge { from_layer, to_layer, import_pattern, path_write } => {
            let facts = facts?;
            if let Some(pat) = import_pattern {
                for line in &facts.added_lines {
                    let in_from = facts
                        .files_touched
                        .iter()
                        .any(|f| f.path == line.path && f.layer.as_deref() == Some(from_layer.as_str()));
                    if in_from && pat.is_match(&line.text) {
                        return Some(Evidence {
                            matched_text: line.text.clone(),
                            file_path: Some(line.path.clone()),
                            command: None,
                            diff_hunk: facts.hunks.get(line.hunk).cloned(),
                        });
                    }
                }
            }
            if *path_write && facts.touches_layer(from_layer) {
                if let Some(f) = facts.files_touched.iter().find(|f| f.layer.as_deref() == Some(to_layer.as_str())) {
                    return Some(Evidence {
                        matched_text: f.path.clone(),
                        file_path: Some(f.path.clone()),
                        command: None,
                        diff_hunk: None,
                    });
                }
            }
            None
        }
        RuleClause::ForbidCommand { pattern } => facts?.commands_run.iter().find_map(|cmd| {
            first_match(pattern, cmd).map(|m| Evidence { command: Some(cmd.clone()), ..Evidence::text(m) })
        }),
        RuleClause::ProtectRegion { globs, .. } => facts?.files_touched.iter().find_map(|f| {
            globs.iter().any(|g| g.is_match(&f.path)).then(|| Evidence {
                file_path: Some(f.path.clone()),
                ..Evidence::text(f.path.clone())
            })
        }),
        RuleClause::ForbidIntent { tags, text_pattern, when_tool } => {
            if node.kind != NodeKind::Reasoning {
                return None;
            }
            if let Some(tool) = when_tool {
                let first = g.first_action_of(node.id)?;
                if first.tool.as_deref() != Some(tool.as_str()) {
                    return None;
                }
            }
            if let Some(tag) = node.intent_tags.iter().find(|t| tags.contains(*t)) {
                return Some(Evidence::text(tag.clone()));
            }
            text_pattern.as_ref().and_then(|p| first_match(p, &node.detail)).map(Evidence::text)
        }
        RuleClause::RequireAction { .. } => None,
    }
}

/// For a `require_action` rule: the node to report at, if the rule fires.
fn require_action_site(
    if_layer_touched: &str,
    then_tool: &str,
    g: &CausalGraph,
    facts: &BTreeMap<NodeId, ChangeFacts>,
) -> Option<(NodeId, String)> {
    let last_run = g
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Action && n.tool.as_deref() == Some(then_tool))
        .map(|n| n.id)
        .max();
    g.nodes().iter().filter(|n| last_run.is_none_or(|r| n.id > r)).find_map(|n| {
        let f = facts.get(&n.id)?;
        let touch = f.files_touched.iter().find(|t| t.layer.as_deref() == Some(if_layer_touched))?;
        Some((n.id, touch.path.clone()))
    })
}

fn explanation(rule: &RuleDecl, node: &GraphNode) -> String {
    let rationale = if rule.rationale.is_empty() {
        format!("rule `{}` ({})", rule.id, rule.clause.kind_name())
    } else {
        rule.rationale.clone()
    };
    format!("{rationale} Node N{} ({}): {}", node.id, node.kind.as_str(), node.label)
}

/// Evaluates every (node, rule) pair. Output is ordered by node seq, then by
/// rule declaration order; at most one report exists per pair.
pub fn detect(g: &CausalGraph, facts: &BTreeMap<NodeId, ChangeFacts>, seeds: &CompiledSeeds) -> Vec<DeviationReport> {
    let mut found: Vec<(NodeId, usize, Evidence)> = Vec::new();
    for (ri, rule) in seeds.rules().iter().enumerate() {
        if let RuleClause::RequireAction { if_layer_touched, then_tool } = &rule.clause {
            if let Some((node, path)) = require_action_site(if_layer_touched, then_tool, g, facts) {
                let matched = format!("{path} written without a later {then_tool} run");
                found.push((node, ri, Evidence { file_path: Some(path), ..Evidence::text(matched) }));
            }
            continue;
        }
        for node in g.nodes() {
            if let Some(ev) = evaluate(rule, node, facts.get(&node.id), g) {
                found.push((node.id, ri, ev));
            }
        }
    }
    found.sort_by_key(|(n, r, _)| (*n, *r));
    found
        .into_iter()
        .filter_map(|(n, ri, evidence)| {
            let rule = &seeds.rules()[ri];
            let node = g.node(n)?;
            Some(DeviationReport {
                deviation_id: deviation_id(g.session_id(), n, &rule.id),
                session_id: g.session_id().into(),
                node_id: n,
                rule_id: rule.id.clone(),
                category: rule.category,
                severity: rule.severity,
                evidence,
                explanation: explanation(rule, node),
            })
        })
        .collect()
}

/// Session-level conformance derived from the most severe finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Conformance {
    Clean,
    Warn,
    Block,
}

impl Conformance {
    pub fn as_str(self) -> &'static str {
        match self {
            Conformance::Clean => "clean",
            Conformance::Warn => "warn",
            Conformance::Block => "block",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Conformance::Clean, Conformance::Warn, Conformance::Block].into_iter().find(|c| c.as_str() == s)
    }

    /// Info-level findings do not change a clean verdict.
    pub fn from_severity(s: Severity) -> Self {
        match s {
            Severity::Info => Conformance::Clean,
            Severity::Warn => Conformance::Warn,
            Severity::Block => Conformance::Block,
        }
    }

    /// Process exit code for `check`: 0 clean, 2 warn, 3 block.
    pub fn exit_code(self) -> i32 {
        match self {
            Conformance::Clean => 0,
            Conformance::Warn => 2,
            Conformance::Block => 3,
        }
    }
}

impl fmt::Display for Conformance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn conformance(reports: &[DeviationReport]) -> Conformance {
    reports.iter().map(|r| Conformance::from_severity(r.severity)).max().unwrap_or(Conformance::Clean)
}

fn opt(v: &Option<String>) -> Value {
    v.as_ref().map_or(Value::Null, |s| Value::String(s.clone()))
}

impl DeviationReport {
    pub fn to_json(&self) -> Value {
        json!({
            "deviation_id": self.deviation_id,
            "session": self.session_id,
            "node": self.node_id,
            "rule": self.rule_id,
            "category": self.category.as_str(),
            "severity": self.severity.as_str(),
            "evidence": {
                "matched_text": self.evidence.matched_text,
                "file_path": opt(&self.evidence.file_path),
                "command": opt(&self.evidence.command),
                "diff_hunk": opt(&self.evidence.diff_hunk),
            },
            "explanation": self.explanation,
        })
    }

    /// One `.devl` line (canonical JSON, no trailing newline).
    pub fn to_line(&self) -> String {
        to_canonical(&self.to_json())
    }

    pub fn from_json(v: &Value) -> Result<Self, String> {
        fn s<'a>(o: &'a Map<String, Value>, k: &str) -> Result<&'a str, String> {
            o.get(k).and_then(Value::as_str).ok_or_else(|| format!("missing string `{k}`"))
        }
        fn os(o: &Map<String, Value>, k: &str) -> Result<Option<String>, String> {
            match o.get(k) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(v)) => Ok(Some(v.clone())),
                _ => Err(format!("`{k}` must be a string or null")),
            }
        }
        let o = v.as_object().ok_or("report must be an object")?;
        let e = o.get("evidence").and_then(Value::as_object).ok_or("missing `evidence`")?;
        Ok(DeviationReport {
            deviation_id: s(o, "deviation_id")?.into(),
            session_id: s(o, "session")?.into(),
            node_id: o.get("node").and_then(Value::as_u64).ok_or("missing `node`")?,
            rule_id: s(o, "rule")?.into(),
            category: Category::from_name(s(o, "category")?).ok_or("bad category")?,
            severity: Severity::from_name(s(o, "severity")?).ok_or("bad severity")?,
            evidence: Evidence {
                matched_text: s(e, "matched_text")?.into(),
                file_path: os(e, "file_path")?,
                command: os(e, "command")?,
                diff_hunk: os(e, "diff_hunk")?,
            },
            explanation: s(o, "explanation")?.into(),
        })
    }

    pub fn from_line(line: &str) -> Result<Self, String> {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        Self::from_json(&v)
    }
}

/// Renders reports as `.devl` text, one line each.
pub fn to_devl(reports: &[DeviationReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub const DEFAULT_VELOCITY_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityMetrics {
    pub nodes_per_review: f64,
    pub churn: f64,
    pub window_nodes: usize,
    pub window_reviews: usize,
}

/// Review pressure and line churn.
///
/// The window is the last `window` nodes in seq order; reviews count when they
/// reference a node inside it. Churn is the fraction of added lines that a
/// later action removes again, matched on (path, text).
pub fn velocity<'a>(
    g: &CausalGraph,
    reviews: impl IntoIterator<Item = &'a ReviewBody>,
    facts: &BTreeMap<NodeId, ChangeFacts>,
    window: usize,
) -> VelocityMetrics {
    let nodes = g.nodes();
    let in_window: BTreeSet<NodeId> = nodes[nodes.len().saturating_sub(window)..].iter().map(|n| n.id).collect();
    let window_reviews = reviews.into_iter().filter(|r| in_window.contains(&r.node_ref)).count();
    let nodes_per_review = in_window.len() as f64 / window_reviews.max(1) as f64;

    let mut live: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let (mut added, mut removed_again) = (0usize, 0usize);
    for f in facts.values() {
        for l in &f.removed_lines {
            if let Some(c) = live.get_mut(&(l.path.as_str(), l.text.as_str())) {
                if *c > 0 {
                    *c -= 1;
                    removed_again += 1;
                }
            }
        }
        for l in &f.added_lines {
            *live.entry((l.path.as_str(), l.text.as_str())).or_default() += 1;
            added += 1;
        }
    }
    let churn = if added == 0 { 0.0 } else { removed_again as f64 / added as f64 };
    VelocityMetrics { nodes_per_review, churn, window_nodes: in_window.len(), window_reviews }
}

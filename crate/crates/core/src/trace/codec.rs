use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value};

use super::*;
use crate::json::{write_field, write_str, write_value};

type Obj = Map<String, Value>;

fn missing(name: &str) -> ParseError {
    ParseError::MissingField(name.into())
}

fn invalid(field: &str, reason: impl Into<String>) -> ParseError {
    ParseError::InvalidField { field: field.into(), reason: reason.into() }
}

fn take(obj: &mut Obj, key: &str, path: &str) -> Result<Value, ParseError> {
    match obj.remove(key) {
        Some(v) => Ok(v),
        None => Err(missing(path)),
    }
}

/// Like `take`, but a JSON `null` counts as absent.
fn take_opt(obj: &mut Obj, key: &str) -> Option<Value> {
    obj.remove(key).filter(|v| !v.is_null())
}

fn as_string(v: Value, path: &str) -> Result<String, ParseError> {
    match v {
        Value::String(s) => Ok(s),
        _ => Err(invalid(path, "expected a string")),
    }
}

fn as_u64(v: &Value, path: &str) -> Result<u64, ParseError> {
    v.as_u64().ok_or_else(|| invalid(path, "expected a non-negative integer"))
}

fn as_string_list(v: Value, path: &str) -> Result<Vec<String>, ParseError> {
    match v {
        Value::Array(items) => items.into_iter().map(|i| as_string(i, path)).collect(),
        _ => Err(invalid(path, "expected a list of strings")),
    }
}

fn parse_object(line: &str) -> Result<Obj, ParseError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(ParseError::MalformedSyntax("record is not a JSON object".into())),
        Err(e) => Err(ParseError::MalformedSyntax(e.to_string())),
    }
}

fn check_ref(field: &'static str, seq: Seq, target: Seq) -> Result<Seq, ParseError> {
    if target < seq {
        Ok(target)
    } else {
        Err(ParseError::BadReference { field, seq, target })
    }
}

/// Parses one SAT line, header or event.
pub fn parse_line(line: &str) -> Result<SatLine, ParseError> {
    let mut obj = parse_object(line)?;
    let version = as_u64(&take(&mut obj, "v", "v")?, "v")?;
    if version != FORMAT_VERSION {
        return Err(ParseError::UnsupportedVersion(version));
    }
    let session_id = as_string(take(&mut obj, "session", "session")?, "session")?;
    if session_id.is_empty() {
        return Err(invalid("session", "must not be empty"));
    }
    let kind = as_string(take(&mut obj, "kind", "kind")?, "kind")?;
    if kind == "header" {
        return parse_header(session_id, version, obj).map(SatLine::Header);
    }
    let kind = EventKind::from_name(&kind).ok_or(ParseError::BadKind(kind))?;
    parse_event_fields(session_id, kind, obj).map(SatLine::Event)
}

/// Parses one event line. A header line is rejected with `BadKind`.
pub fn parse_event(line: &str) -> Result<TraceEvent, ParseError> {
    match parse_line(line)? {
        SatLine::Event(e) => Ok(e),
        SatLine::Header(_) => Err(ParseError::BadKind("header".into())),
    }
}

fn parse_header(session_id: String, format_version: u64, mut obj: Obj) -> Result<SessionHeader, ParseError> {
    let mut body = match take(&mut obj, "body", "body")? {
        Value::Object(b) => b,
        _ => return Err(invalid("body", "expected an object")),
    };
    let agent_label = as_string(take(&mut body, "agent_label", "body.agent_label")?, "body.agent_label")?;
    let intent_vocabulary =
        as_string_list(take(&mut body, "intent_vocabulary", "body.intent_vocabulary")?, "body.intent_vocabulary")?;
    let mut seen = BTreeSet::new();
    for tag in &intent_vocabulary {
        if !is_intent_token(tag) {
            return Err(invalid("body.intent_vocabulary", alloc::format!("{tag:?} is not a lowercase token")));
        }
        if !seen.insert(tag.as_str()) {
            return Err(invalid("body.intent_vocabulary", alloc::format!("{tag:?} declared twice")));
        }
    }
    let started = as_string(take(&mut body, "started_at", "body.started_at")?, "body.started_at")?;
    let started_at = Timestamp::parse(&started).map_err(|e| invalid("body.started_at", e.to_string()))?;
    Ok(SessionHeader {
        session_id,
        format_version,
        intent_vocabulary,
        agent_label,
        started_at,
        body_ext: body.into_iter().collect(),
        ext: obj.into_iter().collect(),
    })
}

fn parse_event_fields(session_id: String, kind: EventKind, mut obj: Obj) -> Result<TraceEvent, ParseError> {
    let seq = as_u64(&take(&mut obj, "seq", "seq")?, "seq")?;
    let ts = as_string(take(&mut obj, "ts", "ts")?, "ts")?;
    let ts = Timestamp::parse(&ts).map_err(|e| invalid("ts", e.to_string()))?;
    let mut body = match take(&mut obj, "body", "body")? {
        Value::Object(b) => b,
        _ => return Err(invalid("body", "expected an object")),
    };
    let body_value = match kind {
        EventKind::Plan => {
            let goal = as_string(take(&mut body, "goal", "body.goal")?, "body.goal")?;
            let steps = as_string_list(take(&mut body, "steps", "body.steps")?, "body.steps")?;
            if steps.is_empty() {
                return Err(invalid("body.steps", "a plan needs at least one step"));
            }
            EventBody::Plan(PlanBody { goal, steps })
        }
        EventKind::Reasoning => {
            let text = as_string(take(&mut body, "text", "body.text")?, "body.text")?;
            let tags = match take_opt(&mut body, "intent_tags") {
                Some(v) => as_string_list(v, "body.intent_tags")?,
                None => Vec::new(),
            };
            let mut intent_tags = BTreeSet::new();
            for tag in tags {
                if !is_intent_token(&tag) {
                    return Err(invalid("body.intent_tags", alloc::format!("{tag:?} is not a lowercase token")));
                }
                intent_tags.insert(tag);
            }
            let parent = match take_opt(&mut body, "parent") {
                Some(v) => Some(check_ref("parent", seq, as_u64(&v, "body.parent")?)?),
                None => None,
            };
            EventBody::Reasoning(ReasoningBody { text, intent_tags, parent })
        }
        EventKind::ToolCall => {
            let tool = as_string(take(&mut body, "tool", "body.tool")?, "body.tool")?;
            if !is_tool_name(&tool) {
                return Err(invalid("body.tool", "tool names are single tokens"));
            }
            let args = match take_opt(&mut body, "args") {
                Some(Value::Object(m)) => m,
                Some(_) => return Err(invalid("body.args", "expected an object")),
                None => Map::new(),
            };
            let mut arg_map = BTreeMap::new();
            for (k, v) in args {
                if v.is_array() || v.is_object() {
                    return Err(invalid("body.args", alloc::format!("argument {k:?} must be a scalar")));
                }
                arg_map.insert(k, v);
            }
            let caused_by = as_u64(&take(&mut body, "caused_by", "body.caused_by")?, "body.caused_by")?;
            let caused_by = check_ref("caused_by", seq, caused_by)?;
            EventBody::ToolCall(ToolCallBody { tool, args: arg_map, caused_by })
        }
        EventKind::Observation => {
            let of = check_ref("of", seq, as_u64(&take(&mut body, "of", "body.of")?, "body.of")?)?;
            let outcome = match as_string(take(&mut body, "outcome", "body.outcome")?, "body.outcome")?.as_str() {
                "ok" => Outcome::Ok,
                "error" => Outcome::Error,
                other => return Err(invalid("body.outcome", alloc::format!("{other:?} is not ok|error"))),
            };
            let payload = match take_opt(&mut body, "payload") {
                Some(v) => as_string(v, "body.payload")?,
                None => String::new(),
            };
            EventBody::Observation(ObservationBody { of, outcome, payload })
        }
        EventKind::Review => {
            let reviewer = as_string(take(&mut body, "reviewer", "body.reviewer")?, "body.reviewer")?;
            let node_ref = as_u64(&take(&mut body, "node_ref", "body.node_ref")?, "body.node_ref")?;
            let node_ref = check_ref("node_ref", seq, node_ref)?;
            let action_name = as_string(take(&mut body, "action", "body.action")?, "body.action")?;
            let action = ReviewAction::from_name(&action_name)
                .ok_or_else(|| invalid("body.action", alloc::format!("unknown review action {action_name:?}")))?;
            let dwell_ms = match take_opt(&mut body, "dwell_ms") {
                Some(v) => Some(as_u64(&v, "body.dwell_ms")?),
                None => None,
            };
            let quiz = match take_opt(&mut body, "quiz") {
                Some(Value::Object(mut q)) => {
                    let question_id = as_string(take(&mut q, "question_id", "body.quiz.question_id")?, "body.quiz.question_id")?;
                    let correct = take(&mut q, "correct", "body.quiz.correct")?
                        .as_bool()
                        .ok_or_else(|| invalid("body.quiz.correct", "expected a boolean"))?;
                    if !q.is_empty() {
                        return Err(invalid("body.quiz", "unexpected keys"));
                    }
                    Some(QuizAnswer { question_id, correct })
                }
                Some(_) => return Err(invalid("body.quiz", "expected an object")),
                None => None,
            };
            match (action, &quiz) {
                (ReviewAction::QuizAnswer, None) => return Err(missing("body.quiz")),
                (a, Some(_)) if a != ReviewAction::QuizAnswer => {
                    return Err(invalid("body.quiz", "only quiz_answer reviews carry a quiz record"))
                }
                _ => {}
            }
            EventBody::Review(ReviewBody { reviewer, node_ref, action, dwell_ms, quiz })
        }
    };
    Ok(TraceEvent {
        session_id,
        seq,
        ts,
        body: body_value,
        body_ext: body.into_iter().collect(),
        ext: obj.into_iter().collect(),
    })
}

fn body_object(e: &TraceEvent) -> Map<String, Value> {
    let mut m = Map::new();
    match &e.body {
        EventBody::Plan(p) => {
            m.insert("goal".into(), Value::String(p.goal.clone()));
            m.insert("steps".into(), p.steps.iter().cloned().map(Value::String).collect());
        }
        EventBody::Reasoning(r) => {
            m.insert("text".into(), Value::String(r.text.clone()));
            m.insert("intent_tags".into(), r.intent_tags.iter().cloned().map(Value::String).collect());
            if let Some(p) = r.parent {
                m.insert("parent".into(), Value::from(p));
            }
        }
        EventBody::ToolCall(t) => {
            m.insert("tool".into(), Value::String(t.tool.clone()));
            m.insert("args".into(), Value::Object(t.args.clone().into_iter().collect()));
            m.insert("caused_by".into(), Value::from(t.caused_by));
        }
        EventBody::Observation(o) => {
            m.insert("of".into(), Value::from(o.of));
            m.insert("outcome".into(), Value::String(o.outcome.as_str().into()));
            m.insert("payload".into(), Value::String(o.payload.clone()));
        }
        EventBody::Review(r) => {
            m.insert("reviewer".into(), Value::String(r.reviewer.clone()));
            m.insert("node_ref".into(), Value::from(r.node_ref));
            m.insert("action".into(), Value::String(r.action.as_str().into()));
            if let Some(d) = r.dwell_ms {
                m.insert("dwell_ms".into(), Value::from(d));
            }
            if let Some(q) = &r.quiz {
                let mut qm = Map::new();
                qm.insert("question_id".into(), Value::String(q.question_id.clone()));
                qm.insert("correct".into(), Value::Bool(q.correct));
                m.insert("quiz".into(), Value::Object(qm));
            }
        }
    }
    for (k, v) in &e.body_ext {
        m.entry(k.clone()).or_insert_with(|| v.clone());
    }
    m
}

const EVENT_KEYS: &[&str] = &["v", "session", "seq", "ts", "kind", "body"];
const HEADER_KEYS: &[&str] = &["v", "session", "kind", "body"];

fn write_ext(out: &mut String, first: &mut bool, ext: &BTreeMap<String, Value>, reserved: &[&str]) {
    for (k, v) in ext {
        // Core keys always win; an extension can never shadow them.
        if reserved.contains(&k.as_str()) {
            continue;
        }
        write_field(out, first, k, v);
    }
}

/// Canonical single-line form of an event (no trailing newline).
pub fn serialize_event(e: &TraceEvent) -> String {
    let mut out = String::with_capacity(128);
    out.push('{');
    let mut first = true;
    write_field(&mut out, &mut first, "v", &Value::from(FORMAT_VERSION));
    write_field(&mut out, &mut first, "session", &Value::String(e.session_id.clone()));
    write_field(&mut out, &mut first, "seq", &Value::from(e.seq));
    out.push_str(",\"ts\":");
    write_str(&mut out, &e.ts.to_rfc3339());
    out.push_str(",\"kind\":");
    write_str(&mut out, e.kind().as_str());
    out.push_str(",\"body\":");
    write_value(&mut out, &Value::Object(body_object(e)));
    write_ext(&mut out, &mut first, &e.ext, EVENT_KEYS);
    out.push('}');
    out
}

/// Canonical single-line form of a session header.
pub fn serialize_header(h: &SessionHeader) -> String {
    let mut body = Map::new();
    body.insert("agent_label".into(), Value::String(h.agent_label.clone()));
    body.insert(
        "intent_vocabulary".into(),
        h.intent_vocabulary.iter().cloned().map(Value::String).collect(),
    );
    body.insert("started_at".into(), Value::String(h.started_at.to_rfc3339()));
    for (k, v) in &h.body_ext {
        body.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let mut out = String::with_capacity(128);
    out.push('{');
    let mut first = true;
    write_field(&mut out, &mut first, "v", &Value::from(h.format_version));
    write_field(&mut out, &mut first, "session", &Value::String(h.session_id.clone()));
    write_field(&mut out, &mut first, "kind", &Value::String("header".into()));
    write_field(&mut out, &mut first, "body", &Value::Object(body));
    write_ext(&mut out, &mut first, &h.ext, HEADER_KEYS);
    out.push('}');
    out
}

pub fn serialize_line(line: &SatLine) -> String {
    match line {
        SatLine::Header(h) => serialize_header(h),
        SatLine::Event(e) => serialize_event(e),
    }
}

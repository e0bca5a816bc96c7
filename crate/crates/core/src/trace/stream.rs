use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StreamError {
    #[error("stream has no session header")]
    MissingHeader,
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: a header may only appear as the first line")]
    UnexpectedHeader { line: usize },
    #[error("seq {0} appears more than once")]
    DuplicateSeq(Seq),
    #[error("seq {seq} follows seq {prev}")]
    NonMonotonicSeq { prev: Seq, seq: Seq },
    #[error("seq {seq}: timestamp goes backwards")]
    NonMonotonicTimestamp { seq: Seq },
    #[error("seq {seq}: `{field}` points at seq {target}, which does not precede it")]
    ForwardReference { seq: Seq, field: &'static str, target: Seq },
    #[error("seq {seq}: `{field}` points at seq {target}, which is not in the stream")]
    DanglingReference { seq: Seq, field: &'static str, target: Seq },
    #[error("seq {seq}: `{field}` points at seq {target}, a {found} event")]
    WrongReferenceKind { seq: Seq, field: &'static str, target: Seq, found: EventKind },
    #[error("tool_call {tool_call} already has an observation; seq {observation} is a second one")]
    MultipleObservations { tool_call: Seq, observation: Seq },
    #[error("seq {seq}: session {found:?} does not match header session {expected:?}")]
    SessionMismatch { seq: Seq, expected: String, found: String },
    #[error("seq {seq}: intent tag {tag:?} is not in the declared vocabulary")]
    UnknownIntentTag { seq: Seq, tag: String },
}

/// Counts and identity of an accepted stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamReport {
    pub session_id: String,
    pub events: usize,
    /// One entry per kind, zeros included.
    pub counts: BTreeMap<EventKind, usize>,
}

impl StreamReport {
    pub fn count(&self, kind: EventKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }
}

/// Single-pass, incremental checker for one session's events.
///
/// `push` either accepts the event and updates state, or rejects it and
/// leaves state untouched, so callers can validate a batch before committing.
#[derive(Debug, Clone)]
pub struct StreamValidator {
    header: SessionHeader,
    vocabulary: BTreeSet<String>,
    kinds: BTreeMap<Seq, EventKind>,
    observed: BTreeSet<Seq>,
    last: Option<(Seq, Timestamp)>,
    counts: BTreeMap<EventKind, usize>,
}

impl StreamValidator {
    pub fn new(header: SessionHeader) -> Self {
        StreamValidator {
            vocabulary: header.intent_vocabulary.iter().cloned().collect(),
            header,
            kinds: BTreeMap::new(),
            observed: BTreeSet::new(),
            last: None,
            counts: EventKind::ALL.into_iter().map(|k| (k, 0)).collect(),
        }
    }

    pub fn header(&self) -> &SessionHeader {
        &self.header
    }

    pub fn last_seq(&self) -> Option<Seq> {
        self.last.map(|(s, _)| s)
    }

    pub fn last_ts(&self) -> Option<Timestamp> {
        self.last.map(|(_, t)| t)
    }

    pub fn kind_of(&self, seq: Seq) -> Option<EventKind> {
        self.kinds.get(&seq).copied()
    }

    /// Checks `e` against everything accepted so far without recording it.
    pub fn check(&self, e: &TraceEvent) -> Result<(), StreamError> {
        if e.session_id != self.header.session_id {
            return Err(StreamError::SessionMismatch {
                seq: e.seq,
                expected: self.header.session_id.clone(),
                found: e.session_id.clone(),
            });
        }
        if self.kinds.contains_key(&e.seq) {
            return Err(StreamError::DuplicateSeq(e.seq));
        }
        if let Some((prev, prev_ts)) = self.last {
            if e.seq < prev {
                return Err(StreamError::NonMonotonicSeq { prev, seq: e.seq });
            }
            if e.ts < prev_ts {
                return Err(StreamError::NonMonotonicTimestamp { seq: e.seq });
            }
        }
        for (field, target) in e.references() {
            if target >= e.seq {
                return Err(StreamError::ForwardReference { seq: e.seq, field, target });
            }
            let found = self
                .kinds
                .get(&target)
                .copied()
                .ok_or(StreamError::DanglingReference { seq: e.seq, field, target })?;
            let allowed = match e.kind() {
                EventKind::Reasoning | EventKind::ToolCall => {
                    matches!(found, EventKind::Plan | EventKind::Reasoning)
                }
                EventKind::Observation => found == EventKind::ToolCall,
                EventKind::Review => {
                    matches!(found, EventKind::Plan | EventKind::Reasoning | EventKind::ToolCall)
                }
                EventKind::Plan => false,
            };
            if !allowed {
                return Err(StreamError::WrongReferenceKind { seq: e.seq, field, target, found });
            }
        }
        match &e.body {
            EventBody::Observation(o) if self.observed.contains(&o.of) => {
                return Err(StreamError::MultipleObservations { tool_call: o.of, observation: e.seq });
            }
            EventBody::Reasoning(r) => {
                if let Some(tag) = r.intent_tags.iter().find(|t| !self.vocabulary.contains(*t)) {
                    return Err(StreamError::UnknownIntentTag { seq: e.seq, tag: tag.clone() });
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn push(&mut self, e: &TraceEvent) -> Result<(), StreamError> {
        self.check(e)?;
        self.kinds.insert(e.seq, e.kind());
        if let EventBody::Observation(o) = &e.body {
            self.observed.insert(o.of);
        }
        *self.counts.entry(e.kind()).or_insert(0) += 1;
        self.last = Some((e.seq, e.ts));
        Ok(())
    }

    pub fn report(&self) -> StreamReport {
        StreamReport {
            session_id: self.header.session_id.clone(),
            events: self.kinds.len(),
            counts: self.counts.clone(),
        }
    }
}

/// Validates a full stream, header first.
pub fn validate_stream(lines: &[SatLine]) -> Result<StreamReport, StreamError> {
    let mut iter = lines.iter().enumerate();
    let mut validator = match iter.next() {
        Some((_, SatLine::Header(h))) => StreamValidator::new(h.clone()),
        _ => return Err(StreamError::MissingHeader),
    };
    for (i, line) in iter {
        match line {
            SatLine::Header(_) => return Err(StreamError::UnexpectedHeader { line: i + 1 }),
            SatLine::Event(e) => validator.push(e)?,
        }
    }
    Ok(validator.report())
}

/// A stream that passed validation. Events are in strictly increasing `seq`.
#[derive(Debug, Clone, PartialEq)]
pub struct SatStream {
    header: SessionHeader,
    events: Vec<TraceEvent>,
}

impl SatStream {
    /// Validates and wraps an already-parsed stream.
    pub fn new(header: SessionHeader, events: Vec<TraceEvent>) -> Result<Self, StreamError> {
        let mut validator = StreamValidator::new(header.clone());
        for e in &events {
            validator.push(e)?;
        }
        Ok(SatStream { header, events })
    }

    pub fn header(&self) -> &SessionHeader {
        &self.header
    }

    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn event(&self, seq: Seq) -> Option<&TraceEvent> {
        self.events
            .binary_search_by_key(&seq, |e| e.seq)
            .ok()
            .map(|i| &self.events[i])
    }

    pub fn reviews(&self) -> impl Iterator<Item = (Seq, &ReviewBody)> {
        self.events.iter().filter_map(|e| match &e.body {
            EventBody::Review(r) => Some((e.seq, r)),
            _ => None,
        })
    }

    pub fn report(&self) -> StreamReport {
        let mut counts: BTreeMap<EventKind, usize> = EventKind::ALL.into_iter().map(|k| (k, 0)).collect();
        for e in &self.events {
            *counts.entry(e.kind()).or_insert(0) += 1;
        }
        StreamReport { session_id: self.header.session_id.clone(), events: self.events.len(), counts }
    }

    /// Canonical text: one line per record, each terminated by `\n`.
    pub fn to_text(&self) -> String {
        let mut out = serialize_header(&self.header);
        out.push('\n');
        for e in &self.events {
            out.push_str(&serialize_event(e));
            out.push('\n');
        }
        out
    }
}

/// Parses and validates SAT text. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_stream(text: &str) -> Result<SatStream, StreamError> {
    let mut header: Option<SessionHeader> = None;
    let mut validator: Option<StreamValidator> = None;
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let line = parse_line(raw).map_err(|source| StreamError::Parse { line: line_no, source })?;
        match (line, validator.as_mut()) {
            (SatLine::Header(h), None) => {
                validator = Some(StreamValidator::new(h.clone()));
                header = Some(h);
            }
            (SatLine::Header(_), Some(_)) => return Err(StreamError::UnexpectedHeader { line: line_no }),
            (SatLine::Event(_), None) => return Err(StreamError::MissingHeader),
            (SatLine::Event(e), Some(v)) => {
                v.push(&e)?;
                events.push(e);
            }
        }
    }
    match header {
        Some(header) => Ok(SatStream { header, events }),
        None => Err(StreamError::MissingHeader),
    }
}

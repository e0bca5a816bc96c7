//! File-backed session store.
//!
//! Layout under the data directory:
//!
//! ```text
//! sessions/<id>.satl   append-only canonical log, the only source of truth
//! seeds/<name>.seed    named seed documents selectable per request
//! quarantine/          rejected batches, one file each, reason on line 1
//! ```
//!
//! Derived artifacts (graph, deviations, CDI, verdict, quiz) are cached in
//! memory under a SHA-256 of everything they are computed from, so a cached
//! entry can never be stale. Ingest still evicts a session's entries to keep
//! the cache small.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sentinel_core::cdi::{CdiConfig, CdiError};
use sentinel_core::deviation::ToolCatalog;
use sentinel_core::graph::to_json_string;
use sentinel_core::json::to_canonical;
use sentinel_core::seeds::{compile, parse_seeds, CompiledSeeds, SeedError};
use sentinel_core::time::Timestamp;
use sentinel_core::trace::{
    parse_line, serialize_event, serialize_header, EventBody, EventKind, QuizAnswer, ReviewAction, ReviewBody,
    SatLine, SatStream, SessionHeader, StreamError, StreamValidator, TraceEvent,
};
use sentinel_core::{analyze, Analysis, Seq};

/// Seed used for quizzes and the reconstruction score when a request does
/// not name one.
pub const DEFAULT_QUIZ_SEED: u64 = 7;

/// Top-level event key carrying a review's client nonce.
pub const NONCE_KEY: &str = "nonce";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("invalid session id {0:?}: use 1-128 characters from [A-Za-z0-9._-], not starting with `.`")]
    BadSessionId(String),
    #[error("unknown seeds `{0}`")]
    UnknownSeeds(String),
    #[error("seq {seq} does not continue the session (last stored seq is {last})")]
    SeqRegression { seq: Seq, last: Seq },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("node {0} is not a plan, reasoning or tool_call event of this session")]
    UnknownNodeRef(Seq),
    #[error("invalid review: {0}")]
    BadReview(String),
    #[error("seeds: {0}")]
    Seed(#[from] SeedError),
    #[error("{0}")]
    Cdi(#[from] CdiError),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Result of an accepted ingest batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestAck {
    pub session_id: String,
    pub accepted: usize,
    pub created: bool,
    pub last_seq: Option<Seq>,
}

/// A review as posted by a client; the store assigns seq and ts.
#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize)]
pub struct ReviewRequest {
    pub reviewer: String,
    pub node_ref: Seq,
    pub action: String,
    #[serde(default)]
    pub dwell_ms: Option<u64>,
    #[serde(default)]
    pub quiz: Option<ReviewQuiz>,
    #[serde(default)]
    pub nonce: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize)]
pub struct ReviewQuiz {
    pub question_id: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewAck {
    pub seq: Seq,
    /// The nonce matched an earlier review, nothing was appended.
    pub duplicate: bool,
}

/// Which derived artifact a cache entry holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArtifactKind {
    Graph,
    Deviations,
    Cdi,
    Verdict,
    Quiz,
}

type NonceKey = (String, Seq, ReviewAction, String);

struct SessionState {
    path: PathBuf,
    validator: StreamValidator,
    text: String,
    nonces: HashMap<NonceKey, Seq>,
}

impl SessionState {
    fn stream(&self) -> SatStream {
        sentinel_core::parse_stream(&self.text).expect("stored logs are validated on append")
    }
}

/// Options fixed for the lifetime of a store.
#[derive(Debug, Clone, Default)]
pub struct StoreConfig {
    /// Seed document used when a request names none.
    pub default_seeds: String,
    pub cdi: CdiConfig,
    pub catalog: ToolCatalog,
}


pub struct Store {
    root: PathBuf,
    config: StoreConfig,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionState>>>>,
    cache: Mutex<HashMap<(String, ArtifactKind, String), Arc<String>>>,
    quarantined: Mutex<u64>,
}

pub fn valid_name(id: &str) -> bool {
    (1..=128).contains(&id.len())
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn now() -> Timestamp {
    let ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0);
    Timestamp::from_millis(ms)
}

fn validation(line: usize, e: impl std::fmt::Display) -> StoreError {
    StoreError::Validation { line, message: e.to_string() }
}

fn nonce_of(e: &TraceEvent) -> Option<(NonceKey, Seq)> {
    let EventBody::Review(r) = &e.body else { return None };
    let nonce = e.ext.get(NONCE_KEY)?.as_str()?;
    Some(((r.reviewer.clone(), r.node_ref, r.action, nonce.to_string()), e.seq))
}

/// Appends `text` to `path`, restoring the original length if anything fails.
fn append_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let len = f.metadata()?.len();
    let r = f.write_all(text.as_bytes()).and_then(|_| f.sync_data());
    if r.is_err() {
        let _ = f.set_len(len);
    }
    r
}

impl Store {
    /// Opens (or creates) a data directory and loads every session log.
    pub fn open(root: impl Into<PathBuf>, config: StoreConfig) -> anyhow::Result<Self> {
        let root = root.into();
        for sub in ["sessions", "seeds", "quarantine"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let mut sessions = BTreeMap::new();
        for entry in fs::read_dir(root.join("sessions"))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("satl") {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let stream = sentinel_core::parse_stream(&text)
                .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
            let id = stream.session_id().to_string();
            anyhow::ensure!(
                path.file_stem().and_then(|s| s.to_str()) == Some(id.as_str()),
                "{}: header names session `{id}`",
                path.display()
            );
            let mut validator = StreamValidator::new(stream.header().clone());
            let mut nonces = HashMap::new();
            for e in stream.events() {
                validator.push(e)?;
                nonces.extend(nonce_of(e));
            }
            let state = SessionState { path, validator, text, nonces };
            sessions.insert(id, Arc::new(Mutex::new(state)));
        }
        let quarantined = fs::read_dir(root.join("quarantine"))?.count() as u64;
        Ok(Store {
            root,
            config,
            sessions: RwLock::new(sessions),
            cache: Mutex::new(HashMap::new()),
            quarantined: Mutex::new(quarantined),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.into()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map lock").keys().cloned().collect()
    }

    /// The stored log, byte for byte.
    pub fn log_text(&self, id: &str) -> Result<String> {
        Ok(self.session(id)?.lock().expect("session lock").text.clone())
    }

    pub fn stream(&self, id: &str) -> Result<SatStream> {
        Ok(self.session(id)?.lock().expect("session lock").stream())
    }

    /// Summary rows for `GET /sessions`.
    pub fn list(&self) -> Vec<Value> {
        let sessions: Vec<_> = self.sessions.read().expect("session map lock").values().cloned().collect();
        sessions
            .iter()
            .map(|s| {
                let s = s.lock().expect("session lock");
                let h = s.validator.header();
                let r = s.validator.report();
                json!({
                    "session": h.session_id,
                    "agent_label": h.agent_label,
                    "started_at": h.started_at.to_rfc3339(),
                    "events": r.events,
                    "reviews": r.count(EventKind::Review),
                    "last_seq": s.validator.last_seq(),
                })
            })
            .collect()
    }

    fn quarantine(&self, session_id: &str, reason: &str, batch: &str) {
        let mut n = self.quarantined.lock().expect("quarantine lock");
        *n += 1;
        let name = if valid_name(session_id) { session_id } else { "invalid-session" };
        let path = self.root.join("quarantine").join(format!("{name}.{:06}.rej", *n));
        let body = format!("# reason: {}\n{batch}", reason.replace('\n', " "));
        if let Err(e) = fs::write(&path, body) {
            tracing::error!(path = %path.display(), error = %e, "could not quarantine rejected batch");
        } else {
            tracing::warn!(session = session_id, reason, "batch quarantined");
        }
    }

    /// Files under `quarantine/`, oldest first.
    pub fn quarantined(&self) -> std::io::Result<Vec<PathBuf>> {
        let mut v: Vec<PathBuf> =
            fs::read_dir(self.root.join("quarantine"))?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        v.sort();
        Ok(v)
    }

    /// Validates and appends a batch of SAT lines as one unit.
    ///
    /// A new session's batch must start with its header. Rejected batches are
    /// written to the quarantine directory with the reason and leave the log
    /// untouched.
    pub fn ingest(&self, session_id: &str, batch: &str) -> Result<IngestAck> {
        let r = self.ingest_inner(session_id, batch);
        if let Err(e) = &r {
            if !matches!(e, StoreError::Io(_)) {
                self.quarantine(session_id, &e.to_string(), batch);
            }
        }
        r
    }

    fn ingest_inner(&self, session_id: &str, batch: &str) -> Result<IngestAck> {
        if !valid_name(session_id) {
            return Err(StoreError::BadSessionId(session_id.into()));
        }
        let mut lines = Vec::new();
        for (i, raw) in batch.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            lines.push((i + 1, parse_line(raw).map_err(|e| validation(i + 1, e))?));
        }

        // Creating a session takes the map write lock so two concurrent
        // creators cannot both win.
        let existing = self.sessions.read().expect("session map lock").get(session_id).cloned();
        let slot = match existing {
            Some(s) => s,
            None => {
                let Some((line, SatLine::Header(h))) = lines.first() else {
                    return Err(StoreError::UnknownSession(session_id.into()));
                };
                if h.session_id != session_id {
                    return Err(validation(*line, format!("header names session `{}`", h.session_id)));
                }
                let mut map = self.sessions.write().expect("session map lock");
                let slot = map
                    .entry(session_id.to_string())
                    .or_insert_with(|| {
                        Arc::new(Mutex::new(SessionState {
                            path: self.root.join("sessions").join(format!("{session_id}.satl")),
                            validator: StreamValidator::new(h.clone()),
                            text: String::new(),
                            nonces: HashMap::new(),
                        }))
                    })
                    .clone();
                slot
            }
        };

        let mut state = slot.lock().expect("session lock");
        let fresh = state.text.is_empty();
        if fresh && !self.is_current(session_id, &slot) {
            // A concurrent creator failed and withdrew this slot.
            return Err(StoreError::UnknownSession(session_id.into()));
        }
        let prepared = (|| {
            let mut validator = state.validator.clone();
            let mut out = String::new();
            let mut nonces = Vec::new();
            let mut accepted = 0;
            for (idx, (line, parsed)) in lines.iter().enumerate() {
                match parsed {
                    SatLine::Header(h) if fresh && idx == 0 => {
                        if h.session_id != session_id {
                            return Err(validation(*line, format!("header names session `{}`", h.session_id)));
                        }
                        validator = StreamValidator::new(h.clone());
                        out.push_str(&serialize_header(h));
                    }
                    SatLine::Header(_) => return Err(validation(*line, "a header may only start a new session")),
                    SatLine::Event(_) if fresh && idx == 0 => {
                        return Err(validation(*line, "a new session must start with its header"))
                    }
                    SatLine::Event(e) => {
                        if let Some(last) = validator.last_seq().filter(|&l| e.seq <= l) {
                            return Err(StoreError::SeqRegression { seq: e.seq, last });
                        }
                        validator.push(e).map_err(|err| validation(*line, err))?;
                        out.push_str(&serialize_event(e));
                        nonces.extend(nonce_of(e));
                        accepted += 1;
                    }
                }
                out.push('\n');
            }
            if out.is_empty() {
                return Err(validation(0, "empty batch"));
            }
            append_atomic(&state.path, &out)?;
            Ok((validator, out, nonces, accepted))
        })();
        let (validator, out, nonces, accepted) = match prepared {
            Ok(p) => p,
            Err(e) => {
                if fresh {
                    // Never leave a session without a header behind.
                    self.sessions.write().expect("session map lock").remove(session_id);
                }
                return Err(e);
            }
        };
        state.validator = validator;
        state.text.push_str(&out);
        state.nonces.extend(nonces);
        let last_seq = state.validator.last_seq();
        drop(state);
        self.evict(session_id);
        Ok(IngestAck { session_id: session_id.into(), accepted, created: fresh, last_seq })
    }

    fn is_current(&self, id: &str, slot: &Arc<Mutex<SessionState>>) -> bool {
        self.sessions.read().expect("session map lock").get(id).is_some_and(|s| Arc::ptr_eq(s, slot))
    }

    /// Appends a reviewer interaction with a server-assigned seq.
    pub fn post_review(&self, session_id: &str, req: &ReviewRequest) -> Result<ReviewAck> {
        let slot = self.session(session_id)?;
        let action = ReviewAction::from_name(&req.action)
            .ok_or_else(|| StoreError::BadReview(format!("unknown action {:?}", req.action)))?;
        if (action == ReviewAction::QuizAnswer) != req.quiz.is_some() {
            return Err(StoreError::BadReview("`quiz` must be present exactly when action is quiz_answer".into()));
        }
        let mut state = slot.lock().expect("session lock");
        if !matches!(
            state.validator.kind_of(req.node_ref),
            Some(EventKind::Plan | EventKind::Reasoning | EventKind::ToolCall)
        ) {
            return Err(StoreError::UnknownNodeRef(req.node_ref));
        }
        let key = req.nonce.as_ref().map(|n| (req.reviewer.clone(), req.node_ref, action, n.clone()));
        if let Some(&seq) = key.as_ref().and_then(|k| state.nonces.get(k)) {
            return Ok(ReviewAck { seq, duplicate: true });
        }
        let seq = state.validator.last_seq().map_or(1, |s| s + 1);
        let ts = state.validator.last_ts().map_or_else(now, |last| last.max(now()));
        let body = ReviewBody {
            reviewer: req.reviewer.clone(),
            node_ref: req.node_ref,
            action,
            dwell_ms: req.dwell_ms,
            quiz: req.quiz.as_ref().map(|q| QuizAnswer { question_id: q.question_id.clone(), correct: q.correct }),
        };
        let mut e = TraceEvent::new(session_id, seq, ts, EventBody::Review(body));
        if let Some(n) = &req.nonce {
            e.ext.insert(NONCE_KEY.into(), Value::String(n.clone()));
        }
        let mut validator = state.validator.clone();
        validator.push(&e).map_err(|err: StreamError| StoreError::BadReview(err.to_string()))?;
        let line = format!("{}\n", serialize_event(&e));
        append_atomic(&state.path, &line)?;
        state.validator = validator;
        state.text.push_str(&line);
        if let Some(k) = key {
            state.nonces.insert(k, seq);
        }
        drop(state);
        self.evict(session_id);
        Ok(ReviewAck { seq, duplicate: false })
    }

    fn evict(&self, session_id: &str) {
        self.cache.lock().expect("cache lock").retain(|(s, _, _), _| s != session_id);
    }

    /// Drops every cached artifact.
    pub fn clear_cache(&self) {
        self.cache.lock().expect("cache lock").clear();
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Seed text for `name`, or the configured default.
    pub fn seeds_text(&self, name: Option<&str>) -> Result<String> {
        match name {
            None => Ok(self.config.default_seeds.clone()),
            Some(n) if !valid_name(n) => Err(StoreError::UnknownSeeds(n.into())),
            Some(n) => match fs::read_to_string(self.root.join("seeds").join(format!("{n}.seed"))) {
                Ok(t) => Ok(t),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::UnknownSeeds(n.into())),
                Err(e) => Err(e.into()),
            },
        }
    }

    /// Stores a named seed document after checking that it compiles.
    pub fn put_seeds(&self, name: &str, text: &str) -> Result<()> {
        if !valid_name(name) {
            return Err(StoreError::UnknownSeeds(name.into()));
        }
        parse_seeds(text)?;
        fs::write(self.root.join("seeds").join(format!("{name}.seed")), text)?;
        Ok(())
    }

    /// Looks up or computes one artifact. `params` distinguishes variants of
    /// the same kind (quiz seed).
    fn artifact(
        &self,
        session_id: &str,
        kind: ArtifactKind,
        seeds: Option<&str>,
        params: &str,
        compute: impl FnOnce(&Analysis, &SessionHeader) -> Result<Value>,
    ) -> Result<Arc<String>> {
        let log = self.log_text(session_id)?;
        let seeds_text = self.seeds_text(seeds)?;
        let cdi = format!("{:?}", self.config.cdi);
        let key_hash = sha256_hex(&[
            format!("{kind:?}").as_bytes(),
            log.as_bytes(),
            seeds_text.as_bytes(),
            cdi.as_bytes(),
            params.as_bytes(),
        ]);
        let key = (session_id.to_string(), kind, key_hash);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let stream = sentinel_core::parse_stream(&log).expect("stored logs are validated on append");
        let compiled: CompiledSeeds = compile(&parse_seeds(&seeds_text)?);
        let analysis = analyze(&stream, &compiled, &self.config.catalog);
        let value = compute(&analysis, stream.header())?;
        let text = Arc::new(to_canonical(&value));
        self.cache.lock().expect("cache lock").insert(key, text.clone());
        Ok(text)
    }

    pub fn graph_json(&self, id: &str, seeds: Option<&str>) -> Result<Arc<String>> {
        self.artifact(id, ArtifactKind::Graph, seeds, "", |a, _| {
            Ok(serde_json::from_str(&to_json_string(&a.graph)).expect("graph export is valid JSON"))
        })
    }

    pub fn deviations_json(&self, id: &str, seeds: Option<&str>) -> Result<Arc<String>> {
        self.artifact(id, ArtifactKind::Deviations, seeds, "", |a, h| {
            Ok(json!({
                "session": h.session_id,
                "conformance": a.conformance().as_str(),
                "deviations": a.reports.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
                "unanalyzable": a.unanalyzable.iter()
                    .map(|u| json!({"node": u.node_id, "error": u.error.to_string()}))
                    .collect::<Vec<_>>(),
            }))
        })
    }

    pub fn cdi_json(&self, id: &str, seeds: Option<&str>, quiz_seed: Option<u64>) -> Result<Arc<String>> {
        let seed = quiz_seed.unwrap_or(DEFAULT_QUIZ_SEED);
        let cfg = self.config.cdi;
        self.artifact(id, ArtifactKind::Cdi, seeds, &seed.to_string(), |a, _| Ok(a.cdi(seed, &cfg)?.to_json()))
    }

    pub fn quiz_json(&self, id: &str, seeds: Option<&str>, quiz_seed: Option<u64>) -> Result<Arc<String>> {
        let seed = quiz_seed.unwrap_or(DEFAULT_QUIZ_SEED);
        self.artifact(id, ArtifactKind::Quiz, seeds, &seed.to_string(), |a, h| {
            let mut q = sentinel_core::cdi::make_quiz(&a.graph, seed)?.to_json();
            q["session"] = Value::String(h.session_id.clone());
            Ok(q)
        })
    }

    pub fn verdict_json(&self, id: &str, seeds: Option<&str>, quiz_seed: Option<u64>) -> Result<Arc<String>> {
        let seed = quiz_seed.unwrap_or(DEFAULT_QUIZ_SEED);
        let cfg = self.config.cdi;
        self.artifact(id, ArtifactKind::Verdict, seeds, &seed.to_string(), |a, h| {
            let cdi = a.cdi(seed, &cfg)?;
            let mut by_severity = BTreeMap::new();
            for r in &a.reports {
                *by_severity.entry(r.severity.as_str()).or_insert(0usize) += 1;
            }
            Ok(json!({
                "session": h.session_id,
                "conformance": a.conformance().as_str(),
                "cdi": cdi.cdi,
                "cdi_verdict": cdi.verdict.as_str(),
                "summary": {
                    "nodes": a.graph.len(),
                    "deviations": a.reports.len(),
                    "by_severity": by_severity,
                    "unanalyzable": a.unanalyzable.len(),
                    "critical_nodes": a.critical.len(),
                    "reviews": a.reviews().len(),
                },
            }))
        })
    }

    /// Review nonces already seen for a session.
    pub fn nonce_count(&self, id: &str) -> Result<usize> {
        Ok(self.session(id)?.lock().expect("session lock").nonces.len())
    }
}

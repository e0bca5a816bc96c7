//! The instrumented tool proxy.
//!
//! A [`Harness`] owns one session: it assigns `seq` values, stamps events with
//! its [`Clock`], validates every event before it is emitted and is the only
//! way to reach the built-in tool executors. Every accepted invocation emits a
//! `tool_call` followed by exactly one `observation`.

mod registry;
mod replay;
mod workspace;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde_json::Value;
use wait_timeout::ChildExt;

use sentinel_core::deviation::EffectClass;
use sentinel_core::diff;
use sentinel_core::time::Timestamp;
use sentinel_core::trace::{
    truncate_payload, EventBody, EventKind, ObservationBody, Outcome, PlanBody, ReasoningBody, SatStream,
    SessionHeader, StreamError, StreamValidator, ToolCallBody, TraceEvent, DEFAULT_PAYLOAD_CAP,
};
use sentinel_core::Seq;

pub use registry::{ArgSpec, ArgType, DuplicateTool, ToolRegistry, ToolSpec};
pub use replay::{parse_script, replay, ParentRef, ReplayError, ReplayScript, ScriptError, ScriptStep, ScriptTool};
pub use workspace::{snapshot_diff, SandboxEscape, Snapshot, Workspace};

pub const DEFAULT_EXEC_TIMEOUT: Duration = Duration::from_secs(30);

/// Source of event timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clock {
    /// Wall clock, never allowed to run backwards.
    System { last: i64 },
    /// Starts at the given epoch milliseconds and advances 1 ms per reading.
    Fixed { next: i64 },
}

#[derive(Debug, thiserror::Error)]
#[error("clock must be `system` or `fixed:<epoch-ms>`, got {0:?}")]
pub struct BadClock(String);

impl Clock {
    pub fn system() -> Self {
        Clock::System { last: i64::MIN }
    }

    pub fn fixed(start_ms: i64) -> Self {
        Clock::Fixed { next: start_ms }
    }

    pub fn now(&mut self) -> Timestamp {
        match self {
            Clock::System { last } => {
                let wall = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_millis() as i64)
                    .unwrap_or(0);
                *last = (*last).max(wall);
                Timestamp::from_millis(*last)
            }
            Clock::Fixed { next } => {
                let t = *next;
                *next += 1;
                Timestamp::from_millis(t)
            }
        }
    }
}

impl std::str::FromStr for Clock {
    type Err = BadClock;

    fn from_str(s: &str) -> Result<Self, BadClock> {
        if s == "system" {
            return Ok(Clock::system());
        }
        s.strip_prefix("fixed:")
            .and_then(|ms| ms.parse().ok())
            .map(Clock::fixed)
            .ok_or_else(|| BadClock(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("tool `{0}` is not registered")]
    UnknownTool(String),
    #[error("tool `{tool}`: {message}")]
    ArgSchemaViolation { tool: String, message: String },
    #[error("caused_by {0} does not name an emitted plan or reasoning event")]
    BadCause(Seq),
    /// Recorded in the stream as the tool_call at `call` plus an error
    /// observation before this is returned.
    #[error("tool_call {call} refused")]
    SandboxEscape { call: Seq, source: SandboxEscape },
    #[error("event rejected: {0}")]
    Invalid(#[from] StreamError),
    #[error("workspace io: {0}")]
    Io(#[from] std::io::Error),
}

/// What one invocation emitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invocation {
    pub call: Seq,
    pub observation: Seq,
    pub outcome: Outcome,
    pub payload: String,
}

/// One session's reasoning-action loop.
pub struct Harness {
    registry: ToolRegistry,
    workspace: Workspace,
    clock: Clock,
    validator: StreamValidator,
    events: Vec<TraceEvent>,
    exec_timeout: Duration,
    payload_cap: usize,
}

impl Harness {
    pub fn new(
        session_id: &str,
        agent_label: &str,
        vocabulary: Vec<String>,
        registry: ToolRegistry,
        workspace: Workspace,
        mut clock: Clock,
    ) -> Self {
        let mut header = SessionHeader::new(session_id, agent_label, clock.now());
        header.intent_vocabulary = vocabulary;
        Harness {
            registry,
            workspace,
            clock,
            validator: StreamValidator::new(header),
            events: Vec::new(),
            exec_timeout: DEFAULT_EXEC_TIMEOUT,
            payload_cap: DEFAULT_PAYLOAD_CAP,
        }
    }

    pub fn with_exec_timeout(mut self, t: Duration) -> Self {
        self.exec_timeout = t;
        self
    }

    pub fn with_payload_cap(mut self, cap: usize) -> Self {
        self.payload_cap = cap;
        self
    }

    pub fn header(&self) -> &SessionHeader {
        self.validator.header()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    /// The stream emitted so far.
    pub fn stream(&self) -> SatStream {
        SatStream::new(self.header().clone(), self.events.clone()).expect("every emitted event was validated")
    }

    pub fn into_stream(self) -> SatStream {
        let header = self.validator.header().clone();
        SatStream::new(header, self.events).expect("every emitted event was validated")
    }

    fn emit(&mut self, body: EventBody) -> Result<Seq, StreamError> {
        let seq = self.validator.last_seq().map_or(1, |s| s + 1);
        let ts = self.clock.now();
        let e = TraceEvent::new(self.header().session_id.clone(), seq, ts, body);
        self.validator.push(&e)?;
        self.events.push(e);
        Ok(seq)
    }

    pub fn plan(&mut self, goal: &str, steps: Vec<String>) -> Result<Seq, HarnessError> {
        Ok(self.emit(EventBody::Plan(PlanBody { goal: goal.into(), steps }))?)
    }

    pub fn reason(&mut self, text: &str, tags: BTreeSet<String>, parent: Option<Seq>) -> Result<Seq, HarnessError> {
        if let Some(p) = parent {
            self.check_governing(p)?;
        }
        Ok(self.emit(EventBody::Reasoning(ReasoningBody { text: text.into(), intent_tags: tags, parent }))?)
    }

    fn check_governing(&self, seq: Seq) -> Result<(), HarnessError> {
        match self.validator.kind_of(seq) {
            Some(EventKind::Plan | EventKind::Reasoning) => Ok(()),
            _ => Err(HarnessError::BadCause(seq)),
        }
    }

    fn check_args(&self, spec: &ToolSpec, args: &BTreeMap<String, Value>) -> Result<(), HarnessError> {
        let violation = |message: String| HarnessError::ArgSchemaViolation { tool: spec.name.clone(), message };
        for a in &spec.args {
            if a.required && !args.contains_key(&a.key) {
                return Err(violation(format!("missing required argument `{}`", a.key)));
            }
        }
        for (k, v) in args {
            let a = spec.arg(k).ok_or_else(|| violation(format!("unexpected argument `{k}`")))?;
            let ok = match a.ty {
                ArgType::Text => v.is_string(),
                ArgType::Count => v.is_u64(),
            };
            if !ok {
                let want = match a.ty {
                    ArgType::Text => "a string",
                    ArgType::Count => "a non-negative integer",
                };
                return Err(violation(format!("argument `{k}` must be {want}")));
            }
        }
        Ok(())
    }

    /// Runs a registered tool through the proxy.
    ///
    /// Schema and cause problems are reported before anything is emitted. A
    /// path that escapes the workspace is recorded (call plus error
    /// observation) and then returned as [`HarnessError::SandboxEscape`].
    pub fn invoke(&mut self, tool: &str, args: BTreeMap<String, Value>, caused_by: Seq) -> Result<Invocation, HarnessError> {
        let spec = self.registry.get(tool).ok_or_else(|| HarnessError::UnknownTool(tool.into()))?.clone();
        self.check_args(&spec, &args)?;
        self.check_governing(caused_by)?;

        let call = self.emit(EventBody::ToolCall(ToolCallBody { tool: tool.into(), args: args.clone(), caused_by }))?;
        let (outcome, payload, escape) = match self.execute(&spec, &args) {
            Ok((outcome, payload)) => (outcome, payload, None),
            Err(Exec::Escape(e)) => (Outcome::Error, format!("sandbox escape refused: {e}"), Some(e)),
            Err(Exec::Failed(msg)) => (Outcome::Error, msg, None),
        };
        let payload = truncate_payload(&payload, self.payload_cap);
        let observation =
            self.emit(EventBody::Observation(ObservationBody { of: call, outcome, payload: payload.clone() }))?;
        match escape {
            Some(source) => Err(HarnessError::SandboxEscape { call, source }),
            None => Ok(Invocation { call, observation, outcome, payload }),
        }
    }

    fn execute(&self, spec: &ToolSpec, args: &BTreeMap<String, Value>) -> Result<(Outcome, String), Exec> {
        let text = |k: &str| args.get(k).and_then(Value::as_str).unwrap_or_default();
        if spec.effect == EffectClass::Write {
            let before = self.workspace.snapshot().map_err(Exec::io)?;
            match spec.name.as_str() {
                "write_file" => {
                    let path = self.workspace.resolve(text("path"))?;
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent).map_err(Exec::io)?;
                    }
                    std::fs::write(path, text("content")).map_err(Exec::io)?;
                }
                "delete_file" => {
                    let path = self.workspace.resolve(text("path"))?;
                    std::fs::remove_file(path).map_err(Exec::io)?;
                }
                "apply_patch" => self.apply_patch(text("patch"))?,
                other => return Err(Exec::Failed(format!("no executor for tool `{other}`"))),
            }
            let after = self.workspace.snapshot().map_err(Exec::io)?;
            return Ok((Outcome::Ok, snapshot_diff(&before, &after)));
        }
        match spec.name.as_str() {
            "read_file" => {
                let path = self.workspace.resolve(text("path"))?;
                let bytes = std::fs::read(path).map_err(Exec::io)?;
                Ok((Outcome::Ok, String::from_utf8_lossy(&bytes).into_owned()))
            }
            "list_dir" => {
                let rel = args.get("path").and_then(Value::as_str).unwrap_or(".");
                let dir = if matches!(rel, "" | ".") { self.workspace.root().to_path_buf() } else { self.workspace.resolve(rel)? };
                let mut names = Vec::new();
                for entry in std::fs::read_dir(dir).map_err(Exec::io)? {
                    let entry = entry.map_err(Exec::io)?;
                    let mut name = entry.file_name().to_string_lossy().into_owned();
                    if entry.file_type().map_err(Exec::io)?.is_dir() {
                        name.push('/');
                    }
                    names.push(name);
                }
                names.sort();
                Ok((Outcome::Ok, names.iter().map(|n| format!("{n}\n")).collect()))
            }
            _ if spec.effect == EffectClass::Execute => {
                let timeout = args.get("timeout_s").and_then(Value::as_u64).map(Duration::from_secs);
                self.run_shell(text("command"), timeout.unwrap_or(self.exec_timeout))
            }
            other => Err(Exec::Failed(format!("no executor for tool `{other}`"))),
        }
    }

    /// Applies every file patch in memory first so a mismatch in a later file
    /// leaves the workspace untouched.
    fn apply_patch(&self, text: &str) -> Result<(), Exec> {
        let patches = diff::parse_unified(text).map_err(|e| Exec::Failed(format!("malformed patch: {e}")))?;
        if patches.is_empty() {
            return Err(Exec::Failed("patch contains no file changes".into()));
        }
        let mut writes = Vec::new();
        for p in &patches {
            let old = p.old_path.as_deref().map(|rel| self.workspace.resolve(rel)).transpose()?;
            let new = p.new_path.as_deref().map(|rel| self.workspace.resolve(rel)).transpose()?;
            let original = match &old {
                Some(path) => Some(std::fs::read_to_string(path).map_err(Exec::io)?),
                None => None,
            };
            let result = diff::apply(original.as_deref(), p).map_err(|e| Exec::Failed(e.to_string()))?;
            if let Some(old) = old.filter(|o| new.as_ref() != Some(o)) {
                writes.push((old, None));
            }
            if let Some(new) = new {
                writes.push((new, result));
            }
        }
        for (path, content) in writes {
            match content {
                Some(c) => {
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent).map_err(Exec::io)?;
                    }
                    std::fs::write(path, c).map_err(Exec::io)?;
                }
                None => std::fs::remove_file(path).map_err(Exec::io)?,
            }
        }
        Ok(())
    }

    fn run_shell(&self, command: &str, timeout: Duration) -> Result<(Outcome, String), Exec> {
        let mut cmd = Command::new("sh");
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let mut child = cmd
            .arg("-c")
            .arg(command)
            .current_dir(self.workspace.root())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(Exec::io)?;
        let drain = |mut r: Box<dyn Read + Send>| {
            std::thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = r.read_to_end(&mut buf);
                buf
            })
        };
        let out = drain(Box::new(child.stdout.take().expect("piped")));
        let err = drain(Box::new(child.stderr.take().expect("piped")));
        let status = match child.wait_timeout(timeout).map_err(Exec::io)? {
            Some(status) => Some(status),
            None => {
                // Kill the whole group so grandchildren release the pipes.
                #[cfg(unix)]
                let _ = Command::new("kill").args(["-s", "KILL", "--"]).arg(format!("-{}", child.id())).status();
                let _ = child.kill();
                let _ = child.wait();
                None
            }
        };
        let mut payload = String::from_utf8_lossy(&out.join().unwrap_or_default()).into_owned();
        payload.push_str(&String::from_utf8_lossy(&err.join().unwrap_or_default()));
        match status {
            Some(s) if s.success() => Ok((Outcome::Ok, payload)),
            Some(s) => {
                payload.push_str(&format!("[exit status: {}]\n", s.code().map_or("signal".into(), |c| c.to_string())));
                Ok((Outcome::Error, payload))
            }
            None => {
                payload.push_str(&format!("[timed out after {} s]\n", timeout.as_secs()));
                Ok((Outcome::Error, payload))
            }
        }
    }
}

enum Exec {
    Escape(SandboxEscape),
    Failed(String),
}

impl Exec {
    fn io(e: std::io::Error) -> Self {
        Exec::Failed(e.to_string())
    }
}

impl From<SandboxEscape> for Exec {
    fn from(e: SandboxEscape) -> Self {
        Exec::Escape(e)
    }
}

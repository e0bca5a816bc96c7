//! Scripted replay: a deterministic stand-in for a live agent.
//!
//! A `.replay` document lists the session header fields, optional workspace
//! files and plan, then the reasoning steps with their tool invocations:
//!
//! ```text
//! session: catalog-cache
//! agent: scripted-replay
//! vocabulary: explore, cache
//! workspace:
//!   - path: src/app.py
//!     content: |
//!       print("hi")
//! plan:
//!   goal: speed up the catalog
//!   steps:
//!     - look around
//! steps:
//!   - reasoning: look around
//!     tags: explore
//!     parent: plan
//!     tools:
//!       - tool: read_file
//!         args:
//!           path: src/app.py
//!         expect: ok
//! ```
//!
//! `parent` is `plan`, `none` or `step N` (1-based, earlier steps only). It
//! defaults to `plan` when a plan is present.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use sentinel_core::doc::{parse_document, DocError, Fields, Node};
use sentinel_core::trace::{Outcome, SatStream};
use sentinel_core::Seq;

use super::{ArgType, Clock, Harness, HarnessError, ToolRegistry, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParentRef {
    None,
    Plan,
    /// 1-based index of an earlier step.
    Step(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptTool {
    pub tool: String,
    pub args: BTreeMap<String, String>,
    pub expect: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptStep {
    pub reasoning: String,
    pub tags: BTreeSet<String>,
    pub parent: ParentRef,
    pub tools: Vec<ScriptTool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayScript {
    pub session_id: String,
    pub agent_label: String,
    pub vocabulary: Vec<String>,
    pub workspace: Vec<(String, String)>,
    pub plan: Option<(String, Vec<String>)>,
    steps: Vec<ScriptStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ScriptError(pub DocError);

impl From<DocError> for ScriptError {
    fn from(e: DocError) -> Self {
        ScriptError(e)
    }
}

impl ReplayScript {
    /// Rejects scripts without steps and parent links that do not point
    /// backwards.
    pub fn new(
        session_id: String,
        agent_label: String,
        vocabulary: Vec<String>,
        workspace: Vec<(String, String)>,
        plan: Option<(String, Vec<String>)>,
        steps: Vec<ScriptStep>,
    ) -> Result<Self, String> {
        if steps.is_empty() {
            return Err("a replay script needs at least one step".into());
        }
        for (i, s) in steps.iter().enumerate() {
            match s.parent {
                ParentRef::Plan if plan.is_none() => return Err(format!("step {}: parent is the plan, but there is no plan", i + 1)),
                ParentRef::Step(n) if n == 0 || n > i => {
                    return Err(format!("step {}: parent must be an earlier step, got step {n}", i + 1))
                }
                _ => {}
            }
        }
        Ok(ReplayScript { session_id, agent_label, vocabulary, workspace, plan, steps })
    }

    pub fn steps(&self) -> &[ScriptStep] {
        &self.steps
    }

    pub fn invocation_count(&self) -> usize {
        self.steps.iter().map(|s| s.tools.len()).sum()
    }
}

fn parse_outcome(node: &Node) -> Result<Outcome, DocError> {
    match node.as_str()? {
        "ok" => Ok(Outcome::Ok),
        "error" => Ok(Outcome::Error),
        other => Err(DocError::new(node.line, node.col, format!("expected ok or error, found {other:?}"))),
    }
}

fn parse_parent(node: &Node) -> Result<ParentRef, DocError> {
    let s = node.as_str()?.trim();
    let bad = || DocError::new(node.line, node.col, format!("expected `plan`, `none` or `step N`, found {s:?}"));
    match s {
        "plan" => Ok(ParentRef::Plan),
        "none" => Ok(ParentRef::None),
        _ => {
            let n = s.strip_prefix("step").ok_or_else(bad)?.trim();
            n.parse().map(ParentRef::Step).map_err(|_| bad())
        }
    }
}

fn parse_tool(node: &Node) -> Result<ScriptTool, DocError> {
    let mut f = Fields::new(node)?;
    let tool = f.required("tool")?.node.as_str()?.to_string();
    let mut args = BTreeMap::new();
    if let Some(e) = f.optional("args") {
        for a in e.node.as_map()? {
            args.insert(a.key.clone(), a.node.as_str()?.to_string());
        }
    }
    let expect = f.optional("expect").map(|e| parse_outcome(&e.node)).transpose()?.unwrap_or(Outcome::Ok);
    f.finish()?;
    Ok(ScriptTool { tool, args, expect })
}

fn parse_step(node: &Node, has_plan: bool) -> Result<ScriptStep, DocError> {
    let mut f = Fields::new(node)?;
    let reasoning = f.required("reasoning")?.node.as_str()?.to_string();
    let tags = f.optional("tags").map(|e| e.node.as_str_list()).transpose()?.unwrap_or_default();
    let default_parent = if has_plan { ParentRef::Plan } else { ParentRef::None };
    let parent = f.optional("parent").map(|e| parse_parent(&e.node)).transpose()?.unwrap_or(default_parent);
    let tools = match f.optional("tools") {
        Some(e) => e.node.as_list()?.iter().map(parse_tool).collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    f.finish()?;
    Ok(ScriptStep { reasoning, tags: tags.into_iter().collect(), parent, tools })
}

/// Parses a `.replay` document.
pub fn parse_script(text: &str) -> Result<ReplayScript, ScriptError> {
    let root = parse_document(text)?;
    let mut f = Fields::new(&root)?;
    let session_id = f.required("session")?.node.as_str()?.to_string();
    let agent_label = f.optional("agent").map(|e| e.node.as_str()).transpose()?.unwrap_or("scripted-replay").to_string();
    let vocabulary = f.optional("vocabulary").map(|e| e.node.as_str_list()).transpose()?.unwrap_or_default();
    let mut workspace = Vec::new();
    if let Some(e) = f.optional("workspace") {
        for item in e.node.as_list()? {
            let mut wf = Fields::new(item)?;
            let path = wf.required("path")?.node.as_str()?.to_string();
            let content = wf.optional("content").map(|e| e.node.as_str()).transpose()?.unwrap_or("").to_string();
            wf.finish()?;
            workspace.push((path, content));
        }
    }
    let plan = match f.optional("plan") {
        Some(e) => {
            let mut pf = Fields::new(&e.node)?;
            let goal = pf.required("goal")?.node.as_str()?.to_string();
            let steps = pf.required("steps")?.node.as_str_list()?;
            pf.finish()?;
            Some((goal, steps))
        }
        None => None,
    };
    let steps_entry = f.required("steps")?;
    let steps = steps_entry
        .node
        .as_list()?
        .iter()
        .map(|n| parse_step(n, plan.is_some()))
        .collect::<Result<Vec<_>, _>>()?;
    f.finish()?;
    ReplayScript::new(session_id, agent_label, vocabulary, workspace, plan, steps)
        .map_err(|m| ScriptError(DocError::new(steps_entry.line, steps_entry.col, m)))
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("populating the workspace: {0}")]
    Workspace(#[source] anyhow::Error),
    /// `tool` is the 1-based invocation within the step, `None` when the
    /// step's reasoning itself was rejected.
    #[error("step {step}")]
    Step { step: usize, tool: Option<usize>, source: HarnessError, partial: Box<SatStream> },
    #[error("step {step}, tool {tool} (`{name}`): expected outcome {expected}, got {actual}: {payload}")]
    OutcomeMismatch {
        step: usize,
        tool: usize,
        name: String,
        expected: &'static str,
        actual: &'static str,
        payload: String,
        partial: Box<SatStream>,
    },
}

impl ReplayError {
    /// Events emitted before the failure, including any recorded escape
    /// attempt.
    pub fn partial(&self) -> Option<&SatStream> {
        match self {
            ReplayError::Workspace(_) => None,
            ReplayError::Step { partial, .. } | ReplayError::OutcomeMismatch { partial, .. } => Some(partial),
        }
    }
}

fn typed_args(registry: &ToolRegistry, tool: &str, args: &BTreeMap<String, String>) -> BTreeMap<String, Value> {
    let spec = registry.get(tool);
    args.iter()
        .map(|(k, v)| {
            let count = spec.and_then(|s| s.arg(k)).is_some_and(|a| a.ty == ArgType::Count);
            let value = match v.trim().parse::<u64>() {
                Ok(n) if count => Value::from(n),
                _ => Value::from(v.as_str()),
            };
            (k.clone(), value)
        })
        .collect()
}

/// Runs `script` against `workspace`, returning the emitted stream.
///
/// With a fixed [`Clock`] and a freshly populated workspace the output is
/// byte-identical across runs.
pub fn replay(
    script: &ReplayScript,
    registry: ToolRegistry,
    workspace: Workspace,
    clock: Clock,
) -> Result<SatStream, ReplayError> {
    workspace
        .populate(script.workspace.iter().map(|(p, c)| (p.as_str(), c.as_str())))
        .map_err(ReplayError::Workspace)?;
    let mut h = Harness::new(&script.session_id, &script.agent_label, script.vocabulary.clone(), registry, workspace, clock);
    let step_err = |h: &Harness, step: usize, tool: Option<usize>, source: HarnessError| ReplayError::Step {
        step,
        tool,
        source,
        partial: Box::new(h.stream()),
    };

    let plan_seq = match &script.plan {
        Some((goal, steps)) => Some(h.plan(goal, steps.clone()).map_err(|e| step_err(&h, 0, None, e))?),
        None => None,
    };
    let mut step_seqs: Vec<Seq> = Vec::with_capacity(script.steps.len());
    for (i, step) in script.steps.iter().enumerate() {
        let n = i + 1;
        let parent = match step.parent {
            ParentRef::None => None,
            ParentRef::Plan => plan_seq,
            ParentRef::Step(k) => Some(step_seqs[k - 1]),
        };
        let seq = h.reason(&step.reasoning, step.tags.clone(), parent).map_err(|e| step_err(&h, n, None, e))?;
        step_seqs.push(seq);
        for (j, t) in step.tools.iter().enumerate() {
            let args = typed_args(h.registry(), &t.tool, &t.args);
            let inv = h.invoke(&t.tool, args, seq).map_err(|e| step_err(&h, n, Some(j + 1), e))?;
            if inv.outcome != t.expect {
                return Err(ReplayError::OutcomeMismatch {
                    step: n,
                    tool: j + 1,
                    name: t.tool.clone(),
                    expected: t.expect.as_str(),
                    actual: inv.outcome.as_str(),
                    payload: inv.payload,
                    partial: Box::new(h.stream()),
                });
            }
        }
    }
    Ok(h.into_stream())
}

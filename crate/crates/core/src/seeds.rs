//! Architectural seeds: human-authored conformance rules.
//!
//! A `.seed` file declares an intent-tag vocabulary, a layer map (layer name
//! to path globs) and an ordered list of rules. Each rule carries exactly one
//! clause:
//!
//! ```text
//! vocabulary: explore, cache, db_access
//!
//! layers:
//!   controller: src/controllers/**
//!   dal: src/dal/**
//!
//! rules:
//!   - id: db-via-dal
//!     category: architectural_drift
//!     severity: block
//!     rationale: Database access goes through the data-access layer.
//!     forbid_layer_edge:
//!       from: controller
//!       to: dal
//!       import_pattern: \bdb\.raw\b
//! ```
//!
//! Other clauses: `forbid_command { pattern }`, `protect_region { globs,
//! reason }`, `forbid_intent { tags, text_pattern?, when_tool? }` and
//! `require_action { if_layer_touched, then_tool }`.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use regex_automata::meta::Regex;

use crate::doc::{self, DocError, Fields, Node};
use crate::glob::Glob;
use crate::trace::is_intent_token;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeedError {
    #[error("line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("line {line}: unknown layer `{id}`")]
    UnknownLayer { id: String, line: usize },
    #[error("line {line}: rule id `{id}` is declared twice")]
    DuplicateRuleId { id: String, line: usize },
    #[error("line {line}: rule `{rule}` has an invalid regex {pattern:?}: {message}")]
    BadRegex { rule: String, pattern: String, line: usize, message: String },
    #[error("line {line}: invalid glob {glob:?}: {message}")]
    BadGlob { glob: String, line: usize, message: String },
    #[error("line {line}: intent tag `{tag}` is not in the vocabulary")]
    UnknownIntentTag { tag: String, line: usize },
}

impl From<DocError> for SeedError {
    fn from(e: DocError) -> Self {
        SeedError::Syntax { line: e.line, col: e.col, message: e.message }
    }
}

/// Position of a declaration in its source file (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    ArchitecturalDrift,
    SemanticStability,
    Security,
    Process,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::ArchitecturalDrift => "architectural_drift",
            Category::SemanticStability => "semantic_stability",
            Category::Security => "security",
            Category::Process => "process",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Category::ArchitecturalDrift, Category::SemanticStability, Category::Security, Category::Process]
            .into_iter()
            .find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered: `Info < Warn < Block`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Info,
    Warn,
    Block,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Warn => "warn",
            Severity::Block => "block",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Severity::Info, Severity::Warn, Severity::Block].into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A compiled regular expression that remembers its source text.
#[derive(Clone)]
pub struct Pattern {
    source: String,
    regex: Regex,
}

impl Pattern {
    pub fn new(source: &str) -> Result<Self, String> {
        let regex = Regex::new(source).map_err(|e| e.to_string())?;
        Ok(Pattern { source: source.into(), regex })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }

    /// The leftmost match, if any.
    pub fn find<'t>(&self, text: &'t str) -> Option<&'t str> {
        self.regex.find(text).map(|m| &text[m.range()])
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl Eq for Pattern {}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pattern({:?})", self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDecl {
    pub name: String,
    pub globs: Vec<Glob>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleClause {
    /// Fires when an added line in a `from_layer` file matches
    /// `import_pattern`, or (with `path_write`) when one action writes files
    /// in both layers.
    ForbidLayerEdge { from_layer: String, to_layer: String, import_pattern: Option<Pattern>, path_write: bool },
    ForbidCommand { pattern: Pattern },
    ProtectRegion { globs: Vec<Glob>, reason: String },
    /// Fires on a reasoning node carrying any of `tags` or whose text matches
    /// `text_pattern`; with `when_tool`, only if the first action it causes
    /// uses that tool.
    ForbidIntent { tags: BTreeSet<String>, text_pattern: Option<Pattern>, when_tool: Option<String> },
    /// Fires once per session if `then_tool` never ran after the last time
    /// `if_layer_touched` was written.
    RequireAction { if_layer_touched: String, then_tool: String },
}

impl RuleClause {
    pub fn kind_name(&self) -> &'static str {
        match self {
            RuleClause::ForbidLayerEdge { .. } => "forbid_layer_edge",
            RuleClause::ForbidCommand { .. } => "forbid_command",
            RuleClause::ProtectRegion { .. } => "protect_region",
            RuleClause::ForbidIntent { .. } => "forbid_intent",
            RuleClause::RequireAction { .. } => "require_action",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleDecl {
    pub id: String,
    pub category: Category,
    pub severity: Severity,
    pub clause: RuleClause,
    pub rationale: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SeedDocument {
    pub vocabulary: Vec<String>,
    pub layers: Vec<LayerDecl>,
    pub rules: Vec<RuleDecl>,
}

impl SeedDocument {
    pub fn empty() -> Self {
        SeedDocument::default()
    }
}

const CLAUSES: [&str; 5] = ["forbid_layer_edge", "forbid_command", "protect_region", "forbid_intent", "require_action"];

fn syntax(node: &Node, message: impl Into<String>) -> SeedError {
    SeedError::Syntax { line: node.line, col: node.col, message: message.into() }
}

fn pattern(rule: &str, node: &Node) -> Result<Pattern, SeedError> {
    let src = node.as_str()?;
    if src.is_empty() {
        return Err(syntax(node, "empty regex"));
    }
    Pattern::new(src).map_err(|message| SeedError::BadRegex {
        rule: rule.into(),
        pattern: src.into(),
        line: node.line,
        message,
    })
}

fn globs(node: &Node) -> Result<Vec<Glob>, SeedError> {
    let list = node.as_str_list()?;
    if list.is_empty() {
        return Err(syntax(node, "at least one glob is required"));
    }
    list.iter()
        .map(|g| {
            Glob::new(g).map_err(|e| SeedError::BadGlob { glob: g.clone(), line: node.line, message: e.to_string() })
        })
        .collect()
}

fn token(node: &Node, what: &str) -> Result<String, SeedError> {
    let s = node.as_str()?;
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(syntax(node, alloc::format!("{what} must be a single token")));
    }
    Ok(s.into())
}

struct Ctx<'a> {
    layers: &'a [LayerDecl],
    vocabulary: &'a [String],
}

impl Ctx<'_> {
    fn layer(&self, node: &Node) -> Result<String, SeedError> {
        let name = token(node, "layer name")?;
        if self.layers.iter().any(|l| l.name == name) {
            Ok(name)
        } else {
            Err(SeedError::UnknownLayer { id: name, line: node.line })
        }
    }
}

fn parse_clause(rule_id: &str, kind: &str, node: &Node, ctx: &Ctx<'_>) -> Result<RuleClause, SeedError> {
    let mut f = Fields::new(node)?;
    let clause = match kind {
        "forbid_layer_edge" => {
            let from_layer = ctx.layer(&f.required("from")?.node)?;
            let to_layer = ctx.layer(&f.required("to")?.node)?;
            let import_pattern = f.optional("import_pattern").map(|e| pattern(rule_id, &e.node)).transpose()?;
            let path_write = match f.optional("path_write") {
                Some(e) => e.node.as_bool()?,
                None => false,
            };
            if import_pattern.is_none() && !path_write {
                return Err(syntax(node, "forbid_layer_edge needs `import_pattern` and/or `path_write: true`"));
            }
            RuleClause::ForbidLayerEdge { from_layer, to_layer, import_pattern, path_write }
        }
        "forbid_command" => RuleClause::ForbidCommand { pattern: pattern(rule_id, &f.required("pattern")?.node)? },
        "protect_region" => {
            let globs = globs(&f.required("globs")?.node)?;
            let reason = match f.optional("reason") {
                Some(e) => e.node.as_str()?.into(),
                None => String::new(),
            };
            RuleClause::ProtectRegion { globs, reason }
        }
        "forbid_intent" => {
            let mut tags = BTreeSet::new();
            if let Some(e) = f.optional("tags") {
                for tag in e.node.as_str_list()? {
                    if !is_intent_token(&tag) || !ctx.vocabulary.contains(&tag) {
                        return Err(SeedError::UnknownIntentTag { tag, line: e.node.line });
                    }
                    tags.insert(tag);
                }
            }
            let text_pattern = f.optional("text_pattern").map(|e| pattern(rule_id, &e.node)).transpose()?;
            if tags.is_empty() && text_pattern.is_none() {
                return Err(syntax(node, "forbid_intent needs `tags` and/or `text_pattern`"));
            }
            let when_tool = f.optional("when_tool").map(|e| token(&e.node, "tool name")).transpose()?;
            RuleClause::ForbidIntent { tags, text_pattern, when_tool }
        }
        "require_action" => {
            let if_layer_touched = ctx.layer(&f.required("if_layer_touched")?.node)?;
            let then_tool = token(&f.required("then_tool")?.node, "tool name")?;
            if let Some(e) = f.optional("within_session") {
                if !e.node.as_bool()? {
                    return Err(syntax(&e.node, "only within-session requirements are supported"));
                }
            }
            RuleClause::RequireAction { if_layer_touched, then_tool }
        }
        _ => unreachable!("clause kinds are filtered by the caller"),
    };
    f.finish()?;
    Ok(clause)
}

fn parse_rule(node: &Node, ctx: &Ctx<'_>) -> Result<RuleDecl, SeedError> {
    let mut f = Fields::new(node)?;
    let id_entry = f.required("id")?;
    let id = token(&id_entry.node, "rule id")?;
    let cat = f.required("category")?;
    let category = Category::from_name(cat.node.as_str()?)
        .ok_or_else(|| syntax(&cat.node, "category must be architectural_drift, semantic_stability, security or process"))?;
    let sev = f.required("severity")?;
    let severity =
        Severity::from_name(sev.node.as_str()?).ok_or_else(|| syntax(&sev.node, "severity must be info, warn or block"))?;
    let rationale = match f.optional("rationale") {
        Some(e) => e.node.as_str()?.trim_end().into(),
        None => String::new(),
    };
    let mut clause = None;
    for kind in CLAUSES {
        if let Some(e) = f.optional(kind) {
            if clause.is_some() {
                return Err(syntax(&e.node, "a rule carries exactly one clause"));
            }
            clause = Some(parse_clause(&id, kind, &e.node, ctx)?);
        }
    }
    f.finish()?;
    let clause = clause.ok_or_else(|| syntax(node, alloc::format!("rule `{id}` has no clause (one of {})", CLAUSES.join(", "))))?;
    Ok(RuleDecl {
        id,
        category,
        severity,
        clause,
        rationale,
        span: Span { line: node.line, col: node.col },
    })
}

/// Parses and validates a `.seed` document.
pub fn parse_seeds(text: &str) -> Result<SeedDocument, SeedError> {
    let root = doc::parse_document(text)?;
    let mut f = Fields::new(&root)?;

    let mut vocabulary: Vec<String> = Vec::new();
    if let Some(e) = f.optional("vocabulary") {
        for tag in e.node.as_str_list()? {
            if !is_intent_token(&tag) {
                return Err(syntax(&e.node, alloc::format!("`{tag}` is not a lowercase intent token")));
            }
            if !vocabulary.contains(&tag) {
                vocabulary.push(tag);
            }
        }
    }

    let mut layers = Vec::new();
    if let Some(e) = f.optional("layers") {
        for entry in e.node.as_map()? {
            layers.push(LayerDecl {
                name: entry.key.clone(),
                globs: globs(&entry.node)?,
                span: Span { line: entry.line, col: entry.col },
            });
        }
    }

    let mut rules: Vec<RuleDecl> = Vec::new();
    if let Some(e) = f.optional("rules") {
        let ctx = Ctx { layers: &layers, vocabulary: &vocabulary };
        for item in e.node.as_list()? {
            let rule = parse_rule(item, &ctx)?;
            if rules.iter().any(|r| r.id == rule.id) {
                return Err(SeedError::DuplicateRuleId { id: rule.id, line: item.line });
            }
            rules.push(rule);
        }
    }
    f.finish()?;
    Ok(SeedDocument { vocabulary, layers, rules })
}

/// Immutable, evaluable seeds. Evaluation depends only on the document and
/// the input, never on earlier queries.
#[derive(Debug, Clone)]
pub struct CompiledSeeds {
    layers: Vec<(String, Vec<Glob>)>,
    rules: Vec<RuleDecl>,
    protected: Vec<Glob>,
}

/// Derives lookup tables from a document. Total: every valid document compiles.
pub fn compile(doc: &SeedDocument) -> CompiledSeeds {
    let layers = doc.layers.iter().map(|l| (l.name.clone(), l.globs.clone())).collect();
    let protected = doc
        .rules
        .iter()
        .filter_map(|r| match &r.clause {
            RuleClause::ProtectRegion { globs, .. } => Some(globs.iter().cloned()),
            _ => None,
        })
        .flatten()
        .collect();
    CompiledSeeds { layers, rules: doc.rules.clone(), protected }
}

impl CompiledSeeds {
    pub fn empty() -> Self {
        compile(&SeedDocument::empty())
    }

    pub fn rules(&self) -> &[RuleDecl] {
        &self.rules
    }

    pub fn rule(&self, id: &str) -> Option<&RuleDecl> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|(n, _)| n.as_str())
    }

    /// First declared layer with a matching glob.
    pub fn classify_path(&self, path: &str) -> Option<&str> {
        self.layers
            .iter()
            .find(|(_, globs)| globs.iter().any(|g| g.is_match(path)))
            .map(|(name, _)| name.as_str())
    }

    /// Whether any `protect_region` rule covers `path`.
    pub fn is_protected(&self, path: &str) -> bool {
        self.protected.iter().any(|g| g.is_match(path))
    }
}

/// Free function form of [`CompiledSeeds::classify_path`].
pub fn classify_path<'s>(seeds: &'s CompiledSeeds, path: &str) -> Option<&'s str> {
    seeds.classify_path(path)
}

//! Cognitive debt index (CDI): how well reviewers engaged with and can
//! reconstruct a session, plus the threshold (CIT) verdict and its trend.
//!
//! With default weights:
//!
//! ```text
//! cdi = 1 - (0.4 * coverage + 0.4 * reconstruction + 0.2 * deliberation)
//! ```
//!
//! * `coverage`: critical nodes with a `viewed` or `acknowledged` review,
//!   over all critical nodes (1 when nothing is critical).
//! * `reconstruction`: quiz questions answered correctly (first answer per
//!   question counts), over all questions (1 when no quiz is required).
//! * `deliberation`: viewed critical nodes whose total `viewed` dwell reaches
//!   the floor, over viewed critical nodes. 1 when nothing is critical and 0
//!   when critical nodes exist but none was viewed.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::deviation::{ChangeFacts, DeviationReport};
use crate::graph::{CausalGraph, NodeId};
use crate::json::to_canonical;
use crate::seeds::CompiledSeeds;
use crate::trace::{ReviewAction, ReviewBody};

pub const DEFAULT_WEIGHTS: Weights = Weights { coverage: 0.4, reconstruction: 0.4, deliberation: 0.2 };
pub const DEFAULT_DWELL_FLOOR_MS: u64 = 5000;
pub const DEFAULT_CIT: f64 = 0.5;
pub const DEFAULT_TREND_DELTA: f64 = 0.1;
/// Questions per quiz, when the principal chain offers that many pairs.
pub const QUIZ_QUESTIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CdiError {
    #[error("principal chain has {0} node(s); a quiz needs at least 2")]
    ChainTooShort(usize),
    #[error("weights must be finite, non-negative and sum to 1 (got {0:?})")]
    BadWeights(Weights),
    #[error("threshold must lie in [0, 1] (got {0})")]
    BadThreshold(f64),
    #[error("review references node {0}, which is not in the graph")]
    UnknownNodeRef(NodeId),
    #[error("trend needs at least {needed} reports, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("trend window must be at least 2 (got {0})")]
    BadWindow(usize),
}

/// Deviation-bearing nodes plus nodes that touched protected paths.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CriticalSet {
    pub nodes: BTreeSet<NodeId>,
}

impl CriticalSet {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
}

pub fn critical_set(
    reports: &[DeviationReport],
    facts: &BTreeMap<NodeId, ChangeFacts>,
    seeds: &CompiledSeeds,
) -> CriticalSet {
    let mut nodes: BTreeSet<NodeId> = reports.iter().map(|r| r.node_id).collect();
    for (&id, f) in facts {
        if f.files_touched.iter().any(|t| seeds.is_protected(&t.path)) {
            nodes.insert(id);
        }
    }
    CriticalSet { nodes }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuizQuestion {
    pub question_id: String,
    /// Node pair asked about: "does `pair.0` precede `pair.1`?"
    pub pair: (NodeId, NodeId),
    /// Whether `pair.0` comes before `pair.1` on the principal chain.
    pub truth: bool,
}

impl QuizQuestion {
    pub const KIND: &'static str = "edge_question";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuizSpec {
    pub seed: u64,
    pub chain: Vec<NodeId>,
    pub questions: Vec<QuizQuestion>,
}

impl QuizSpec {
    pub fn to_json(&self) -> Value {
        let qs: Vec<Value> = self
            .questions
            .iter()
            .map(|q| {
                json!({
                    "question_id": q.question_id,
                    "kind": QuizQuestion::KIND,
                    "pair": [q.pair.0, q.pair.1],
                    "truth": q.truth,
                    "prompt": format!("Does N{} happen before N{} on the principal chain?", q.pair.0, q.pair.1),
                })
            })
            .collect();
        json!({"seed": self.seed, "principal_chain": self.chain, "questions": qs})
    }
}

/// Draws order questions over the principal chain. Deterministic in `seed`.
pub fn make_quiz(g: &CausalGraph, seed: u64) -> Result<QuizSpec, CdiError> {
    let chain = g.principal_chain().unwrap_or_default();
    if chain.len() < 2 {
        return Err(CdiError::ChainTooShort(chain.len()));
    }
    let mut pairs = Vec::new();
    for i in 0..chain.len() {
        for j in i + 1..chain.len() {
            pairs.push((i, j));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = QUIZ_QUESTIONS.min(pairs.len());
    let picks = rand::seq::index::sample(&mut rng, pairs.len(), k);
    let questions = picks
        .iter()
        .map(|p| {
            let (i, j) = pairs[p];
            let (a, b) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
            let pair = (chain[a], chain[b]);
            QuizQuestion { question_id: format!("q-{}-{}", pair.0, pair.1), pair, truth: a < b }
        })
        .collect();
    Ok(QuizSpec { seed, chain, questions })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub coverage: f64,
    pub reconstruction: f64,
    pub deliberation: f64,
}

impl Weights {
    pub fn validate(&self) -> Result<(), CdiError> {
        let ws = [self.coverage, self.reconstruction, self.deliberation];
        let ok = ws.iter().all(|w| w.is_finite() && *w >= 0.0) && (ws.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(CdiError::BadWeights(*self))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdiConfig {
    pub weights: Weights,
    pub dwell_floor_ms: u64,
    pub cit_threshold: f64,
}

impl Default for CdiConfig {
    fn default() -> Self {
        CdiConfig { weights: DEFAULT_WEIGHTS, dwell_floor_ms: DEFAULT_DWELL_FLOOR_MS, cit_threshold: DEFAULT_CIT }
    }
}

impl CdiConfig {
    pub fn validate(&self) -> Result<(), CdiError> {
        self.weights.validate()?;
        if !(0.0..=1.0).contains(&self.cit_threshold) {
            return Err(CdiError::BadThreshold(self.cit_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdiVerdict {
    Ok,
    Alert,
}

impl CdiVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            CdiVerdict::Ok => "ok",
            CdiVerdict::Alert => "alert",
        }
    }
}

impl fmt::Display for CdiVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdiReport {
    pub session_id: String,
    pub coverage: f64,
    pub reconstruction: f64,
    pub deliberation: f64,
    pub cdi: f64,
    pub config: CdiConfig,
    pub verdict: CdiVerdict,
    pub critical_nodes: Vec<NodeId>,
    pub quiz_seed: Option<u64>,
    pub quiz_questions: usize,
}

/// Combines component scores into the index and verdict.
pub fn combine(coverage: f64, reconstruction: f64, deliberation: f64, config: &CdiConfig) -> (f64, CdiVerdict) {
    let w = &config.weights;
    let engaged = w.coverage * coverage + w.reconstruction * reconstruction + w.deliberation * deliberation;
    let cdi = (1.0 - engaged).clamp(0.0, 1.0);
    let verdict = if cdi > config.cit_threshold { CdiVerdict::Alert } else { CdiVerdict::Ok };
    (cdi, verdict)
}

/// Scores one session. Reviews must reference nodes of `g`.
pub fn compute_cdi<'a>(
    g: &CausalGraph,
    critical: &CriticalSet,
    reviews: impl IntoIterator<Item = &'a ReviewBody>,
    quiz: Option<&QuizSpec>,
    config: &CdiConfig,
) -> Result<CdiReport, CdiError> {
    config.validate()?;
    let mut covered = BTreeSet::new();
    let mut dwell: BTreeMap<NodeId, u64> = BTreeMap::new();
    let mut answers: BTreeMap<&str, bool> = BTreeMap::new();
    for r in reviews {
        if !g.contains(r.node_ref) {
            return Err(CdiError::UnknownNodeRef(r.node_ref));
        }
        match r.action {
            ReviewAction::Viewed => {
                covered.insert(r.node_ref);
                let d = dwell.entry(r.node_ref).or_default();
                *d = d.saturating_add(r.dwell_ms.unwrap_or(0));
            }
            ReviewAction::Acknowledged => {
                covered.insert(r.node_ref);
            }
            ReviewAction::QuizAnswer => {
                if let Some(q) = &r.quiz {
                    answers.entry(q.question_id.as_str()).or_insert(q.correct);
                }
            }
            ReviewAction::Flagged => {}
        }
    }

    let coverage = if critical.is_empty() {
        1.0
    } else {
        critical.nodes.iter().filter(|n| covered.contains(*n)).count() as f64 / critical.len() as f64
    };

    let reconstruction = match quiz {
        Some(q) if !q.questions.is_empty() => {
            let right = q.questions.iter().filter(|x| answers.get(x.question_id.as_str()) == Some(&true)).count();
            right as f64 / q.questions.len() as f64
        }
        _ => 1.0,
    };

    let viewed: Vec<NodeId> = critical.nodes.iter().copied().filter(|n| dwell.contains_key(n)).collect();
    let deliberation = if critical.is_empty() {
        1.0
    } else if viewed.is_empty() {
        0.0
    } else {
        viewed.iter().filter(|n| dwell[*n] >= config.dwell_floor_ms).count() as f64 / viewed.len() as f64
    };

    let (cdi, verdict) = combine(coverage, reconstruction, deliberation, config);
    Ok(CdiReport {
        session_id: g.session_id().into(),
        coverage,
        reconstruction,
        deliberation,
        cdi,
        config: *config,
        verdict,
        critical_nodes: critical.nodes.iter().copied().collect(),
        quiz_seed: quiz.map(|q| q.seed),
        quiz_questions: quiz.map_or(0, |q| q.questions.len()),
    })
}

impl CdiReport {
    pub fn to_json(&self) -> Value {
        json!({
            "session": self.session_id,
            "coverage": self.coverage,
            "reconstruction": self.reconstruction,
            "deliberation": self.deliberation,
            "cdi": self.cdi,
            "cit_threshold": self.config.cit_threshold,
            "verdict": self.verdict.as_str(),
            "weights": {
                "coverage": self.config.weights.coverage,
                "reconstruction": self.config.weights.reconstruction,
                "deliberation": self.config.weights.deliberation,
            },
            "dwell_floor_ms": self.config.dwell_floor_ms,
            "critical_nodes": self.critical_nodes,
            "quiz": {"seed": self.quiz_seed, "questions": self.quiz_questions},
            "meta": {
                "threshold_calibrated": false,
                "note": "the CIT default is a placeholder and has not been calibrated against reviewer studies",
            },
        })
    }

    /// `.cdi` file content: one canonical JSON record.
    pub fn to_record(&self) -> String {
        to_canonical(&self.to_json())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Stable,
    Drifting,
}

impl Trend {
    pub fn as_str(self) -> &'static str {
        match self {
            Trend::Stable => "stable",
            Trend::Drifting => "drifting",
        }
    }
}

/// Compares the mean CDI of the last `window` values with the `window`
/// values before them. Drifting when the increase exceeds `delta`.
pub fn cdi_trend_values(values: &[f64], window: usize, delta: f64) -> Result<Trend, CdiError> {
    if window < 2 {
        return Err(CdiError::BadWindow(window));
    }
    let needed = 2 * window;
    if values.len() < needed {
        return Err(CdiError::InsufficientHistory { needed, got: values.len() });
    }
    let tail = &values[values.len() - needed..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (prev, last) = tail.split_at(window);
    Ok(if mean(last) - mean(prev) > delta { Trend::Drifting } else { Trend::Stable })
}

/// Trend over time-ordered reports with the default delta.
pub fn cdi_trend(reports: &[CdiReport], window: usize) -> Result<Trend, CdiError> {
    let values: Vec<f64> = reports.iter().map(|r| r.cdi).collect();
    cdi_trend_values(&values, window, DEFAULT_TREND_DELTA)
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for CdiReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cdi {:.3} ({}; threshold {}) coverage {:.3} reconstruction {:.3} deliberation {:.3}",
            self.cdi, self.verdict, self.config.cit_threshold, self.coverage, self.reconstruction, self.deliberation
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, tests::CATALOG_TRACE};
    use crate::trace::{parse_stream, QuizAnswer};

    fn graph() -> CausalGraph {
        build_graph(&parse_stream(CATALOG_TRACE).unwrap())
    }

    fn review(node: NodeId, action: ReviewAction, dwell: Option<u64>) -> ReviewBody {
        ReviewBody { reviewer: "ana".into(), node_ref: node, action, dwell_ms: dwell, quiz: None }
    }

    fn answer(id: &str, correct: bool) -> ReviewBody {
        ReviewBody {
            quiz: Some(QuizAnswer { question_id: id.into(), correct }),
            ..review(1, ReviewAction::QuizAnswer, None)
        }
    }

    #[test]
    fn quiz_is_deterministic_and_truthful() {
        let g = graph();
        let q = make_quiz(&g, 7).unwrap();
        assert_eq!(q, make_quiz(&g, 7).unwrap());
        assert_eq!(q.questions.len(), 3);
        let chain = g.principal_chain().unwrap();
        for question in &q.questions {
            let pa = chain.iter().position(|&n| n == question.pair.0).unwrap();
            let pb = chain.iter().position(|&n| n == question.pair.1).unwrap();
            assert_eq!(question.truth, pa < pb);
        }
        let single = build_graph(
            &parse_stream(&CATALOG_TRACE.lines().take(2).map(|l| format!("{l}\n")).collect::<String>()).unwrap(),
        );
        assert_eq!(make_quiz(&single, 7), Err(CdiError::ChainTooShort(1)));
    }

    #[test]
    fn empty_obligation_and_no_engagement() {
        let g = graph();
        let r = compute_cdi(&g, &CriticalSet::default(), [], None, &CdiConfig::default()).unwrap();
        assert_eq!((r.coverage, r.reconstruction, r.deliberation, r.cdi), (1.0, 1.0, 1.0, 0.0));
        assert_eq!(r.verdict, CdiVerdict::Ok);

        let critical = CriticalSet { nodes: [6].into() };
        let quiz = make_quiz(&g, 7).unwrap();
        let r = compute_cdi(&g, &critical, [], Some(&quiz), &CdiConfig::default()).unwrap();
        assert_eq!(r.cdi, 1.0);
        assert_eq!(r.verdict, CdiVerdict::Alert);
    }

    #[test]
    fn components() {
        let g = graph();
        let critical = CriticalSet { nodes: [5, 6].into() };
        let quiz = make_quiz(&g, 7).unwrap();
        let ids: Vec<&str> = quiz.questions.iter().map(|q| q.question_id.as_str()).collect();
        let reviews = [
            review(6, ReviewAction::Viewed, Some(3000)),
            review(6, ReviewAction::Viewed, Some(2500)),
            answer(ids[0], true),
            answer(ids[0], false),
            answer(ids[1], true),
            answer(ids[2], false),
        ];
        let r = compute_cdi(&g, &critical, &reviews, Some(&quiz), &CdiConfig::default()).unwrap();
        assert_eq!(r.coverage, 0.5);
        assert!((r.reconstruction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.deliberation, 1.0);

        let bad = review(999, ReviewAction::Viewed, None);
        assert_eq!(
            compute_cdi(&g, &critical, [&bad], None, &CdiConfig::default()),
            Err(CdiError::UnknownNodeRef(999))
        );
    }

    #[test]
    fn weights_are_checked() {
        let g = graph();
        let cfg = CdiConfig {
            weights: Weights { coverage: 0.5, reconstruction: 0.5, deliberation: 0.5 },
            ..CdiConfig::default()
        };
        assert!(matches!(compute_cdi(&g, &CriticalSet::default(), [], None, &cfg), Err(CdiError::BadWeights(_))));
        let cfg = CdiConfig { cit_threshold: f64::NAN, ..CdiConfig::default() };
        assert!(matches!(cfg.validate(), Err(CdiError::BadThreshold(_))));
    }

    #[test]
    fn trend() {
        assert_eq!(cdi_trend_values(&[0.1, 0.1, 0.4, 0.5], 2, 0.1), Ok(Trend::Drifting));
        assert_eq!(cdi_trend_values(&[0.3; 6], 3, 0.1), Ok(Trend::Stable));
        assert_eq!(cdi_trend_values(&[0.3], 2, 0.1), Err(CdiError::InsufficientHistory { needed: 4, got: 1 }));
        assert_eq!(cdi_trend_values(&[0.3; 8], 1, 0.1), Err(CdiError::BadWindow(1)));
    }
}

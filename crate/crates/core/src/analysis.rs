//! One-call pipeline: graph, change facts, deviations and annotations.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::cdi::{self, CdiConfig, CdiError, CdiReport, CriticalSet, QuizSpec};
use crate::deviation::{
    self, detect, extract_change_facts, ChangeFacts, Conformance, DeviationReport, FactsError, ToolCatalog,
    VelocityMetrics,
};
use crate::graph::{build_graph, CausalGraph, NodeId, NodeKind};
use crate::seeds::CompiledSeeds;
use crate::trace::{ReviewBody, SatStream};

/// An action whose recorded diff could not be parsed. It is excluded from
/// detection and lifts the session verdict to at least `warn`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unanalyzable {
    pub node_id: NodeId,
    pub error: FactsError,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    /// The graph with layers and deviation ids filled in.
    pub graph: CausalGraph,
    pub facts: BTreeMap<NodeId, ChangeFacts>,
    pub unanalyzable: Vec<Unanalyzable>,
    pub reports: Vec<DeviationReport>,
    pub critical: CriticalSet,
    reviews: Vec<ReviewBody>,
}

pub fn analyze(stream: &SatStream, seeds: &CompiledSeeds, catalog: &ToolCatalog) -> Analysis {
    let mut graph = build_graph(stream);
    let mut facts = BTreeMap::new();
    let mut unanalyzable = Vec::new();
    for node in graph.nodes().iter().filter(|n| n.kind == NodeKind::Action) {
        match extract_change_facts(node, stream, seeds, catalog) {
            Ok(f) => {
                facts.insert(node.id, f);
            }
            Err(error) => unanalyzable.push(Unanalyzable { node_id: node.id, error }),
        }
    }
    let reports = detect(&graph, &facts, seeds);
    for (&id, f) in &facts {
        graph.set_layer_touched(id, f.first_layer().map(Into::into));
    }
    for r in &reports {
        graph.add_deviation(r.node_id, r.deviation_id.clone());
    }
    let critical = cdi::critical_set(&reports, &facts, seeds);
    let reviews = stream.reviews().map(|(_, r)| r.clone()).collect();
    Analysis { graph, facts, unanalyzable, reports, critical, reviews }
}

impl Analysis {
    pub fn conformance(&self) -> Conformance {
        let c = deviation::conformance(&self.reports);
        if self.unanalyzable.is_empty() {
            c
        } else {
            c.max(Conformance::Warn)
        }
    }

    pub fn reviews(&self) -> &[ReviewBody] {
        &self.reviews
    }

    pub fn velocity(&self, window: usize) -> VelocityMetrics {
        deviation::velocity(&self.graph, &self.reviews, &self.facts, window)
    }

    /// Quiz for this session, or `None` when the principal chain is too short.
    pub fn quiz(&self, seed: u64) -> Option<QuizSpec> {
        cdi::make_quiz(&self.graph, seed).ok()
    }

    pub fn cdi(&self, quiz_seed: u64, config: &CdiConfig) -> Result<CdiReport, CdiError> {
        let quiz = self.quiz(quiz_seed);
        cdi::compute_cdi(&self.graph, &self.critical, &self.reviews, quiz.as_ref(), config)
    }
}

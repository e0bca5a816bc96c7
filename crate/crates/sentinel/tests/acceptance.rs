//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentinel::harness::{parse_script, replay, Clock, ToolRegistry, Workspace};
use sentinel::store::{Store, StoreConfig};
use sentinel_core::cdi::{combine, compute_cdi, make_quiz, CdiConfig, CriticalSet};
use sentinel_core::graph::{to_dot, to_json_string, CausalGraph};
use sentinel_core::seeds::{compile, parse_seeds, Category};
use sentinel_core::testing::{random_event, random_reviews, random_seed_doc, random_stream, StreamShape};
use sentinel_core::trace::{
    parse_event, parse_line, serialize_event, serialize_line, EventKind, QuizAnswer, ReviewAction, ReviewBody,
};
use sentinel_core::{analyze, build_graph, parse_stream, ToolCatalog};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

fn scenario() -> Result<String, String> {
    let started = Instant::now();
    let script = parse_script(&std::fs::read_to_string(support::fixtures().join("replay/catalog-cache.replay")).unwrap())
        .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path()).unwrap();
    let stream = replay(&script, ToolRegistry::with_defaults(), ws, Clock::fixed(support::EPOCH)).map_err(|e| format!("{e:#}"))?;
    let seeds = compile(&parse_seeds(&support::catalog_seeds()).map_err(|e| e.to_string())?);
    let a = analyze(&stream, &seeds, &ToolCatalog::default());
    let chain = a.graph.principal_chain().map_err(|e| e.to_string())?;
    let took = within(Duration::from_secs(1), started)?;
    ensure(chain.len() == 4, || format!("principal chain {chain:?}"))?;
    ensure(a.reports.len() == 1, || format!("{} deviations", a.reports.len()))?;
    let r = &a.reports[0];
    ensure(r.node_id == chain[2], || format!("deviation at N{}, chain {chain:?}", r.node_id))?;
    ensure(r.category == Category::ArchitecturalDrift, || format!("category {}", r.category.as_str()))?;
    Ok(format!("chain {chain:?}, deviation at N{} ({}), {took:?}", r.node_id, r.category.as_str()))
}

fn detector_oracle() -> Result<String, String> {
    let started = Instant::now();
    let mut findings = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = random_stream(&mut rng, StreamShape::default());
        let doc = random_seed_doc(&mut rng, 6);
        ensure(stream.report().count(EventKind::Plan) + stream.report().count(EventKind::Reasoning) + stream.report().count(EventKind::ToolCall) <= 20, || format!("seed {seed}: too many nodes"))?;
        ensure(doc.rules.len() <= 6, || format!("seed {seed}: too many rules"))?;
        let a = analyze(&stream, &compile(&doc), &ToolCatalog::default());
        let got: Vec<support::Finding> = a
            .reports
            .iter()
            .map(|r| (r.node_id, r.rule_id.clone(), r.evidence.matched_text.clone(), r.evidence.file_path.clone()))
            .collect();
        let want = support::naive_detect(&stream, &doc);
        ensure(got == want, || format!("seed {seed}: detect {got:?} vs oracle {want:?}"))?;
        findings += got.len();
    }
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!("200/200 sessions agree, {findings} findings, {took:?}"))
}

fn acyclic(g: &CausalGraph) -> bool {
    let mut indeg: BTreeMap<u64, usize> = g.nodes().iter().map(|n| (n.id, 0)).collect();
    for e in g.edges() {
        *indeg.get_mut(&e.to).unwrap() += 1;
    }
    let mut ready: Vec<u64> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for e in g.edges().iter().filter(|e| e.from == n) {
            let d = indeg.get_mut(&e.to).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(e.to);
            }
        }
    }
    seen == g.len()
}

fn graph_invariants() -> Result<String, String> {
    for seed in 0..500u64 {
        let stream = random_stream(&mut ChaCha8Rng::seed_from_u64(seed), StreamShape::default());
        let g = build_graph(&stream);
        let r = stream.report();
        ensure(acyclic(&g), || format!("seed {seed}: cycle"))?;
        let expected = r.count(EventKind::Plan) + r.count(EventKind::Reasoning) + r.count(EventKind::ToolCall);
        ensure(g.len() == expected, || format!("seed {seed}: {} nodes, {expected} expected", g.len()))?;
        let again = build_graph(&stream);
        ensure(to_dot(&g) == to_dot(&again) && to_json_string(&g) == to_json_string(&again), || {
            format!("seed {seed}: exports differ between runs")
        })?;
    }
    Ok("500/500 streams acyclic, node-conserving, deterministic".into())
}

fn golden_files() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(support::core_fixtures().join("../golden"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "satl"))
        .collect();
    v.sort();
    v
}

fn sat_round_trip() -> Result<String, String> {
    let files = golden_files();
    ensure(files.len() >= 50, || format!("only {} golden files", files.len()))?;
    let mut lines = 0;
    for path in &files {
        let text = std::fs::read_to_string(path).unwrap();
        for (no, line) in text.lines().enumerate() {
            let parsed = parse_line(line).map_err(|e| format!("{}:{}: {e}", path.display(), no + 1))?;
            let again = serialize_line(&parsed);
            ensure(again == line, || format!("{}:{}: serialize(parse(line)) differs", path.display(), no + 1))?;
            ensure(parse_line(&again).ok() == Some(parsed), || format!("{}:{}: parse(serialize) differs", path.display(), no + 1))?;
            lines += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc);
    for i in 0..1000 {
        let e = random_event(&mut rng);
        let line = serialize_event(&e);
        let back = parse_event(&line).map_err(|err| format!("event {i}: {err}"))?;
        ensure(back == e && serialize_event(&back) == line, || format!("event {i}: mismatch on {line}"))?;
    }
    Ok(format!("{} files ({lines} lines) and 1000 random events, zero mismatches", files.len()))
}

struct CdiCase {
    graph: CausalGraph,
    critical: CriticalSet,
    quiz: Option<sentinel_core::cdi::QuizSpec>,
    reviews: Vec<ReviewBody>,
}

fn cdi_case(seed: u64) -> CdiCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = random_stream(&mut rng, StreamShape { max_nodes: 15, ..StreamShape::default() });
    let graph = build_graph(&stream);
    let ids: Vec<u64> = graph.topo_order().collect();
    let critical = CriticalSet { nodes: ids.iter().copied().filter(|_| rng.random_bool(0.3)).collect() };
    let quiz = make_quiz(&graph, rng.random()).ok();
    let qids: Vec<String> = quiz.iter().flat_map(|q| q.questions.iter().map(|x| x.question_id.clone())).collect();
    let n = rng.random_range(0..12);
    let reviews = random_reviews(&mut rng, &ids, &qids, n);
    CdiCase { graph, critical, quiz, reviews }
}

fn cdi_properties() -> Result<String, String> {
    let cfg = CdiConfig::default();
    let score = |c: &CdiCase, reviews: &[ReviewBody], critical: &CriticalSet| {
        compute_cdi(&c.graph, critical, reviews, c.quiz.as_ref(), &cfg).map_err(|e| e.to_string())
    };
    let mut monotone_steps = 0;
    for seed in 0..1000u64 {
        let c = cdi_case(seed);
        let r = score(&c, &c.reviews, &c.critical)?;
        for v in [r.coverage, r.reconstruction, r.deliberation, r.cdi] {
            ensure((0.0..=1.0).contains(&v), || format!("seed {seed}: {v} out of range"))?;
        }
        // Add coverage and correct answers one at a time.
        let mut reviews = c.reviews.clone();
        let mut last = r.cdi;
        let covered: BTreeSet<u64> = reviews.iter().map(|r| r.node_ref).collect();
        let mut additions: Vec<ReviewBody> = c
            .critical
            .nodes
            .iter()
            .filter(|n| !covered.contains(n))
            .map(|&n| ReviewBody { reviewer: "acc".into(), node_ref: n, action: ReviewAction::Acknowledged, dwell_ms: None, quiz: None })
            .collect();
        for q in c.quiz.iter().flat_map(|q| &q.questions) {
            additions.push(ReviewBody {
                reviewer: "acc".into(),
                node_ref: q.pair.0,
                action: ReviewAction::QuizAnswer,
                dwell_ms: None,
                quiz: Some(QuizAnswer { question_id: q.question_id.clone(), correct: true }),
            });
        }
        for add in additions {
            reviews.push(add);
            let now = score(&c, &reviews, &c.critical)?.cdi;
            ensure(now <= last + 1e-12, || format!("seed {seed}: CDI rose from {last} to {now}"))?;
            last = now;
            monotone_steps += 1;
        }
        // No critical nodes and no quiz.
        let empty = compute_cdi(&c.graph, &CriticalSet::default(), &c.reviews, None, &cfg).map_err(|e| e.to_string())?;
        ensure(empty.cdi == 0.0, || format!("seed {seed}: empty obligation gives {}", empty.cdi))?;
    }
    let (worked, _) = combine(0.5, 0.75, 1.0, &cfg);
    ensure((worked - 0.3).abs() <= 1e-9, || format!("worked example gives {worked}"))?;
    Ok(format!("1000 cases bounded, {monotone_steps} monotone steps, empty = 0, worked example {worked:.12}"))
}

fn purity() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let config = || StoreConfig { default_seeds: support::catalog_seeds(), ..StoreConfig::default() };
    let store = Store::open(dir.path(), config()).map_err(|e| format!("{e:#}"))?;
    let mut texts: Vec<String> = golden_files().iter().map(|p| std::fs::read_to_string(p).unwrap()).collect();
    for script in support::replay_scripts() {
        let run = support::run_file(&script);
        texts.push(support::stream_of(&run).to_text());
    }
    for text in &texts {
        let id = parse_stream(text).map_err(|e| e.to_string())?.session_id().to_string();
        if !store.session_ids().contains(&id) {
            store.ingest(&id, text).map_err(|e| format!("{id}: {e}"))?;
        }
    }
    let artifacts = |s: &Store, id: &str| -> Vec<String> {
        let show = |r: Result<std::sync::Arc<String>, sentinel::store::StoreError>| match r {
            Ok(t) => t.to_string(),
            Err(e) => format!("error: {e}"),
        };
        vec![show(s.verdict_json(id, None, None)), show(s.graph_json(id, None)), show(s.cdi_json(id, None, None))]
    };
    let ids = store.session_ids();
    let cached: Vec<Vec<String>> = ids.iter().map(|id| artifacts(&store, id)).collect();
    store.clear_cache();
    let recomputed: Vec<Vec<String>> = ids.iter().map(|id| artifacts(&store, id)).collect();
    drop(store);
    let fresh = Store::open(dir.path(), config()).map_err(|e| format!("{e:#}"))?;
    let reopened: Vec<Vec<String>> = ids.iter().map(|id| artifacts(&fresh, id)).collect();
    for (i, id) in ids.iter().enumerate() {
        ensure(cached[i] == recomputed[i], || format!("{id}: artifacts differ after dropping caches"))?;
        ensure(cached[i] == reopened[i], || format!("{id}: artifacts differ after reopening the store"))?;
    }
    Ok(format!("{} sessions, verdict/graph/CDI byte-identical after cache drop and reopen", ids.len()))
}

fn harness_confinement() -> Result<String, String> {
    let scripts = support::replay_scripts();
    let mut calls = 0;
    for path in &scripts {
        let run = support::run_file(path);
        let stream = support::stream_of(&run);
        calls += support::assert_paired(stream);
        if run.result.is_ok() {
            let n = support::assert_paired(stream);
            ensure(n == run.script.invocation_count(), || format!("{}: {n} pairs", path.display()))?;
        }
        ensure(run.outside.0 == run.outside.1, || format!("{}: files outside the workspace changed", path.display()))?;
    }
    Ok(format!("{} scripts, {calls} tool_call/observation pairs, nothing outside the root changed", scripts.len()))
}

fn main() {
    let criteria: [(&str, Check); 7] = [
        ("scenario reproduction", scenario),
        ("detector oracle equivalence", detector_oracle),
        ("graph invariants", graph_invariants),
        ("SAT round-trip", sat_round_trip),
        ("CDI properties", cdi_properties),
        ("event-sourcing purity", purity),
        ("harness confinement and pairing", harness_confinement),
    ];
    // Failures are reported on the result line, not as panic noise.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

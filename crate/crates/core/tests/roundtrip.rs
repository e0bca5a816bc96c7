//! SAT round-trip over the golden corpus and random events.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentinel_core::analyze;
use sentinel_core::graph::to_json_string;
use sentinel_core::seeds::compile;
use sentinel_core::testing::{random_event, random_seed_doc};
use sentinel_core::trace::{parse_event, parse_line, parse_stream, serialize_event, serialize_line};
use sentinel_core::ToolCatalog;

fn dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

fn satl_files(name: &str) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir(name))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "satl"))
        .collect();
    files.sort();
    files
}

fn python() -> Option<&'static str> {
    ["python3", "python"].into_iter().find(|p| Command::new(p).arg("--version").output().is_ok_and(|o| o.status.success()))
}

#[test]
fn golden_corpus_has_at_least_fifty_files() {
    assert!(satl_files("golden").len() >= 50);
}

#[test]
fn golden_lines_are_fixed_points() {
    let mut lines = 0;
    for path in satl_files("golden") {
        let text = fs::read_to_string(&path).unwrap();
        for (no, line) in text.lines().enumerate() {
            let parsed = parse_line(line).unwrap_or_else(|e| panic!("{}:{}: {e}", path.display(), no + 1));
            let again = serialize_line(&parsed);
            assert_eq!(again, line, "{}:{}", path.display(), no + 1);
            assert_eq!(parse_line(&again).unwrap(), parsed);
            lines += 1;
        }
        let stream = parse_stream(&text).unwrap();
        assert_eq!(stream.to_text(), text, "{}", path.display());
    }
    assert!(lines > 500);
}

#[test]
fn golden_corpus_is_canonical_per_python() {
    let Some(py) = python() else {
        eprintln!("python not found; skipping the independent canonicalizer check");
        return;
    };
    let out = Command::new(py)
        .arg(dir("canon.py"))
        .arg("check")
        .args(satl_files("golden"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn noncanonical_inputs_canonicalize_like_python() {
    let py = python();
    let files = satl_files("noncanonical");
    assert!(!files.is_empty());
    for path in files {
        let text = fs::read_to_string(&path).unwrap();
        let ours: String = text.lines().map(|l| serialize_line(&parse_line(l).unwrap()) + "\n").collect();
        let golden = fs::read_to_string(dir("golden").join(path.file_name().unwrap())).unwrap();
        assert_eq!(ours, golden, "{}", path.display());
        if let Some(py) = py {
            let out = Command::new(py).arg(dir("canon.py")).arg("print").arg(&path).output().unwrap();
            assert!(out.status.success());
            assert_eq!(String::from_utf8(out.stdout).unwrap(), ours, "{}", path.display());
        }
    }
}

#[test]
fn thousand_random_events_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a7);
    for _ in 0..1000 {
        let e = random_event(&mut rng);
        let line = serialize_event(&e);
        assert!(!line.contains('\n') && !line.ends_with(' '));
        let back = parse_event(&line).unwrap_or_else(|err| panic!("{err}: {line}"));
        assert_eq!(back, e);
        assert_eq!(serialize_event(&back), line);
    }
}

fn with_unknown_keys(text: &str, every: usize) -> String {
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            if i % every == 0 {
                format!("{},\"zz_vendor\":{{\"k\":[1,\"two\",null]}}}}\n", &l[..l.len() - 1])
            } else {
                format!("{l}\n")
            }
        })
        .collect()
}

#[test]
fn unknown_top_level_keys_change_nothing_downstream() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for path in satl_files("golden") {
        let text = fs::read_to_string(&path).unwrap();
        let seeds = compile(&random_seed_doc(&mut rng, 6));
        let plain = analyze(&parse_stream(&text).unwrap(), &seeds, &ToolCatalog::default());
        let extended = analyze(&parse_stream(&with_unknown_keys(&text, 2)).unwrap(), &seeds, &ToolCatalog::default());
        assert_eq!(plain.reports, extended.reports);
        assert_eq!(to_json_string(&plain.graph), to_json_string(&extended.graph));
        assert_eq!(plain.conformance(), extended.conformance());
    }
}

proptest! {
    #[test]
    fn serialize_parse_identity(seed in any::<u64>()) {
        let e = random_event(&mut ChaCha8Rng::seed_from_u64(seed));
        let line = serialize_event(&e);
        prop_assert_eq!(parse_event(&line).unwrap(), e);
    }

    #[test]
    fn equal_events_serialize_identically(seed in any::<u64>()) {
        let a = random_event(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = random_event(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(serialize_event(&a), serialize_event(&b));
    }
}

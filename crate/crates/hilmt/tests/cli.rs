mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{build_store, data, load_pairs, record_translation_fixtures};
use hilmt::gateway::{record_fixture, ChatMessage, GenerationParams};
use hilmt::pipeline::{PipelineConfig, Strategy, TranslationRecord};
use serde_json::Value;

fn hilmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hilmt"))
        .args(args)
        .env_remove("HILMT_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_flag() {
    let expected: &[(&str, &[&str])] = &[
        (
            "collect",
            &[
                "--domain",
                "--corpus",
                "--store",
                "--backend",
                "--fixtures",
                "--sample",
                "--seed",
                "--now",
            ],
        ),
        (
            "translate",
            &[
                "--input",
                "--store",
                "--domain",
                "--strategy",
                "--shots",
                "--retriever",
                "--pool",
                "--ngram",
                "--out",
                "--backend",
                "--fixtures",
                "--parallelism",
            ],
        ),
        ("evaluate", &["--hyp", "--ref", "--report", "--lowercase"]),
        (
            "analyze",
            &["--hyp", "--ref", "--pos-tags", "--buckets", "--report"],
        ),
        (
            "serve",
            &["--port", "--store", "--backend", "--cors-origin"],
        ),
    ];
    for (sub, flags) in expected {
        let out = hilmt(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = stdout(&out);
        for flag in *flags {
            assert!(text.contains(flag), "{sub} --help lacks {flag}:\n{text}");
        }
    }
    assert_eq!(hilmt(&["--help"]).status.code(), Some(0));
    assert_eq!(hilmt(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["translate", "--bogus"][..],
        &["evaluate", "--hyp", "a.txt"],
        &[
            "translate",
            "--input",
            "x",
            "--domain",
            "it",
            "--out",
            "y",
            "--shots",
            "4",
        ],
        &[
            "translate",
            "--input",
            "x",
            "--domain",
            "it",
            "--out",
            "y",
            "--strategy",
            "best",
        ],
        &["frobnicate"],
        &[],
    ] {
        let out = hilmt(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn runtime_errors_exit_two_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let out = hilmt(&["evaluate", "--hyp", s(&missing), "--ref", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.txt"), "{}", stderr(&out));

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "a\tb\n\nc\td\te\n").unwrap();
    let out = hilmt(&[
        "translate",
        "--input",
        s(&bad),
        "--domain",
        "it",
        "--strategy",
        "draft",
        "--out",
        s(&dir.path().join("o.jsonl")),
        "--backend",
        "replay",
        "--fixtures",
        s(&dir.path().join("fx.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.tsv:3"), "{}", stderr(&out));

    let out = hilmt(&[
        "collect",
        "--domain",
        "it",
        "--corpus",
        s(&data("collect5.tsv")),
        "--store",
        s(&dir.path().join("store.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("HILMT_API_KEY"), "{}", stderr(&out));
}

#[test]
fn fixture_miss_names_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fx.jsonl");
    std::fs::write(&fixtures, "").unwrap();
    let out = hilmt(&[
        "collect",
        "--domain",
        "it",
        "--corpus",
        s(&data("collect5.tsv")),
        "--store",
        s(&dir.path().join("store.jsonl")),
        "--backend",
        "replay",
        "--fixtures",
        s(&fixtures),
    ]);
    // Misses are per-sentence skips during collection, not fatal.
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(
        stdout(&out).contains("appended=0 skipped=5"),
        "{}",
        stdout(&out)
    );
    assert!(
        stderr(&out).contains("fixture miss for digest"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn draft_then_evaluate_scores_one_hundred() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("fx.jsonl");
    let params = GenerationParams::default();
    let pairs = load_pairs("it_test.tsv");
    for pair in &pairs {
        let prompt = format!(
            "Translate the following German text into English. Output only the translation.\n{}",
            pair.source
        );
        record_fixture(
            &fixtures,
            &[ChatMessage::user(prompt)],
            &params,
            pair.reference.as_deref().unwrap(),
        )
        .unwrap();
    }
    let out_path = dir.path().join("draft.jsonl");
    let out = hilmt(&[
        "translate",
        "--input",
        s(&data("it_test.tsv")),
        "--domain",
        "it",
        "--strategy",
        "draft",
        "--out",
        s(&out_path),
        "--backend",
        "replay",
        "--fixtures",
        s(&fixtures),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        stdout(&out).trim(),
        format!(
            "hilmt translate ok records=20 invalid=0 failed=0 out={}",
            s(&out_path)
        )
    );

    let report = dir.path().join("report.json");
    let out = hilmt(&[
        "evaluate",
        "--hyp",
        s(&out_path),
        "--ref",
        s(&data("it_test.tsv")),
        "--report",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(
        stdout(&out).starts_with("hilmt evaluate ok sentences=20 bleu=100"),
        "{}",
        stdout(&out)
    );
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["bleu"], 100.0);
    assert_eq!(report["ter"], 0.0);
    assert_eq!(report["sentence_count"], 20);
}

#[test]
fn compare_translation_with_three_shots() {
    let dir = tempfile::tempdir().unwrap();
    let config = PipelineConfig::default();
    let store_path = dir.path().join("store.jsonl");
    let store = build_store(&store_path, &config);
    let fixtures = dir.path().join("fx.jsonl");
    let sources: Vec<String> = load_pairs("it_test.tsv")
        .into_iter()
        .map(|p| p.source)
        .collect();
    record_translation_fixtures(&fixtures, &store, &sources, &config, Strategy::CompareHil);

    let out_path = dir.path().join("out.jsonl");
    let out = hilmt(&[
        "translate",
        "--input",
        s(&data("it_test.tsv")),
        "--store",
        s(&store_path),
        "--domain",
        "it",
        "--strategy",
        "compare",
        "--shots",
        "3",
        "--retriever",
        "rerank",
        "--out",
        s(&out_path),
        "--backend",
        "replay",
        "--fixtures",
        s(&fixtures),
        "--parallelism",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let records: Vec<TranslationRecord> = std::fs::read_to_string(&out_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 20);
    for (r, source) in records.iter().zip(&sources) {
        assert_eq!(&r.source, source);
        assert!(r.demos_used.len() <= 3);
        assert!(r.final_text == r.draft || Some(&r.final_text) == r.refined.as_ref());
    }

    // Refinement without a store is a runtime error.
    let out = hilmt(&[
        "translate",
        "--input",
        s(&data("it_test.tsv")),
        "--domain",
        "it",
        "--out",
        s(&out_path),
        "--backend",
        "replay",
        "--fixtures",
        s(&fixtures),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_reports_buckets_and_tags() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("analysis.json");
    let refs = data("pos_refs.txt");
    let out = hilmt(&[
        "analyze",
        "--hyp",
        s(&refs),
        "--ref",
        s(&refs),
        "--pos-tags",
        s(&data("pos_tagged.txt")),
        "--buckets",
        "5,10",
        "--report",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(
        stdout(&out).starts_with("hilmt analyze ok"),
        "{}",
        stdout(&out)
    );
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let buckets = report["buckets"].as_array().unwrap();
    assert!(!buckets.is_empty() && buckets.len() <= 3);
    assert!(buckets.iter().all(|b| b["bleu"] == 100.0));
    assert!(report["pos"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p["accuracy"] == 1.0));

    let out = hilmt(&[
        "analyze",
        "--hyp",
        s(&refs),
        "--ref",
        s(&refs),
        "--buckets",
        "10,5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

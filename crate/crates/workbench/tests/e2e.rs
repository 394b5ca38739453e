mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use medanno::pipeline::{run_annotate, RunConfig};
use medanno::report::{run_report, ReportConfig};
use medanno_core::evalsuite::{evaluate_corpus, EvalOptions, Level, Mode};
use medanno_core::model::{
    read_annotation_sets, read_jsonl_lines, write_corpus, write_jsonl, Document, FieldType, Source,
};
use medanno_core::prompting::{BackendConfig, FixtureRecord};

fn config(dir: &Path, out: &str) -> RunConfig {
    RunConfig::new(
        dir.join("corpus.jsonl"),
        dir.join(out),
        BackendConfig::Replay {
            fixtures: dir.join("fixtures.jsonl"),
        },
    )
}

const OUTPUTS: [&str; 5] = [
    "llm-iob.jsonl",
    "llm-direct.jsonl",
    "llm-ensemble.jsonl",
    "resolve_log.jsonl",
    "summary.json",
];

#[test]
fn replay_run_writes_three_sets_per_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    common::write_fixture_corpus(dir.path(), &cfg);

    let summary = run_annotate(&cfg).unwrap();
    assert_eq!(summary.documents, 3);
    assert_eq!(summary.succeeded, 3);
    assert!(summary.failures.is_empty());
    assert_eq!(summary.exit_code(), 0);
    let mut total = 0;
    for source in [Source::LlmIob, Source::LlmDirect, Source::LlmEnsemble] {
        let sets = read_annotation_sets(&cfg.out_dir.join(format!("{source}.jsonl"))).unwrap();
        assert_eq!(sets.len(), 3, "{source}");
        assert!(sets.iter().all(|s| s.source == source));
        total += sets.len();
    }
    assert_eq!(total, 9);
}

#[test]
fn replay_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = config(dir.path(), "run1");
    common::write_fixture_corpus(dir.path(), &first);
    let second = RunConfig {
        out_dir: dir.path().join("run2"),
        workers: Some(1),
        ..first.clone()
    };
    run_annotate(&first).unwrap();
    run_annotate(&second).unwrap();
    for name in OUTPUTS {
        let a = fs::read(first.out_dir.join(name)).unwrap();
        let b = fs::read(second.out_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn ensemble_recovers_what_each_schema_drops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    let (_, gold) = common::write_fixture_corpus(dir.path(), &cfg);
    run_annotate(&cfg).unwrap();

    let opts = EvalOptions { include_reason: true };
    let read = |s: Source| read_annotation_sets(&cfg.out_dir.join(format!("{s}.jsonl"))).unwrap();
    let recall = |s: Source| {
        evaluate_corpus(&gold, &read(s), Level::Phrase, Mode::Vertical, &opts)
            .unwrap()
            .overall
    };
    let (iob, direct, ens) = (
        recall(Source::LlmIob),
        recall(Source::LlmDirect),
        recall(Source::LlmEnsemble),
    );
    assert!(iob.recall < 1.0 && direct.recall < 1.0);
    assert_eq!(ens.recall, 1.0);
    assert_eq!(ens.precision, 1.0);
    let horizontal = evaluate_corpus(
        &gold,
        &read(Source::LlmEnsemble),
        Level::Phrase,
        Mode::Horizontal,
        &opts,
    )
    .unwrap();
    // IOB output carries no positions, so the second "as needed" in doc-b
    // aligns to the first occurrence and lands in the wrong entry
    assert_eq!(horizontal.per_field[&FieldType::Name].f1, 1.0);
    assert!(horizontal.overall.recall <= ens.recall);
    assert_eq!(horizontal.per_field[&FieldType::Frequency].fn_, 1);
}

#[test]
fn missing_fixture_isolates_the_document() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    common::write_fixture_corpus(dir.path(), &cfg);

    // drop every completion for doc-b by rewriting fixtures for the other docs only
    let (docs, gold) = common::corpus();
    let keep: Vec<usize> = vec![0, 2];
    let sub_docs: Vec<Document> = keep.iter().map(|&i| docs[i].clone()).collect();
    let sub_gold: Vec<_> = keep.iter().map(|&i| gold[i].clone()).collect();
    write_jsonl(
        &dir.path().join("fixtures.jsonl"),
        &common::fixture_records(&cfg, &sub_docs, &sub_gold),
    )
    .unwrap();

    let summary = run_annotate(&cfg).unwrap();
    assert_eq!(summary.succeeded, 2);
    assert_eq!(summary.failures.len(), 1);
    assert_eq!(summary.failures[0].doc_id, "doc-b");
    assert_eq!(summary.exit_code(), 2);
    let sets = read_annotation_sets(&cfg.out_dir.join("llm-ensemble.jsonl")).unwrap();
    let ids: Vec<&str> = sets.iter().map(|s| s.doc_id.as_str()).collect();
    assert_eq!(ids, vec!["doc-a", "doc-c"]);
}

#[test]
fn empty_corpus_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("corpus.jsonl"), &[]).unwrap();
    write_jsonl::<FixtureRecord>(&dir.path().join("fixtures.jsonl"), &[]).unwrap();
    let cfg = config(dir.path(), "out");
    let summary = run_annotate(&cfg).unwrap();
    assert_eq!(summary.documents, 0);
    assert_eq!(summary.exit_code(), 0);
    assert!(read_annotation_sets(&cfg.out_dir.join("llm-iob.jsonl"))
        .unwrap()
        .is_empty());
}

#[test]
fn recording_reproduces_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "out");
    common::write_fixture_corpus(dir.path(), &cfg);
    cfg.record = Some(dir.path().join("recorded.jsonl"));
    run_annotate(&cfg).unwrap();
    let mut want: Vec<FixtureRecord> = read_jsonl_lines(&dir.path().join("fixtures.jsonl"))
        .unwrap()
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    want.sort_by(|a, b| a.fingerprint.cmp(&b.fingerprint));
    want.dedup();
    let got: Vec<FixtureRecord> = read_jsonl_lines(&dir.path().join("recorded.jsonl"))
        .unwrap()
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    assert_eq!(got, want);
}

#[test]
fn report_scores_gold_against_itself_and_skips_unknown_subset_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    common::write_fixture_corpus(dir.path(), &cfg);
    run_annotate(&cfg).unwrap();
    fs::write(dir.path().join("subset.txt"), "doc-a\ndoc-c\nghost\n").unwrap();

    let report = ReportConfig {
        gold: dir.path().join("gold.jsonl"),
        preds: vec![
            ("gold".into(), dir.path().join("gold.jsonl")),
            ("iob".into(), cfg.out_dir.join("llm-iob.jsonl")),
            ("ensemble".into(), cfg.out_dir.join("llm-ensemble.jsonl")),
        ],
        out_dir: dir.path().join("report"),
        pairs: vec![("ensemble".into(), "iob".into())],
        base: None,
        refined: None,
        subset: Some(dir.path().join("subset.txt")),
        options: EvalOptions::default(),
        beta: 2.0,
        n_resamples: 200,
        seed: 7,
    };
    let summary = run_report(&report).unwrap();
    assert_eq!(summary.documents, vec!["doc-a".to_string(), "doc-c".to_string()]);
    assert_eq!(summary.unknown_subset_ids, vec!["ghost".to_string()]);

    let mut rdr = csv::Reader::from_path(report.out_dir.join("metrics.csv")).unwrap();
    let rows: Vec<medanno::report::ReportRow> = rdr.deserialize().map(Result::unwrap).collect();
    let gold_rows: Vec<_> = rows.iter().filter(|r| r.method == "gold").collect();
    // two levels by two modes, each with the scored fields plus an overall row
    assert_eq!(gold_rows.len(), 4 * 6);
    for r in gold_rows.iter().filter(|r| r.tp > 0) {
        assert_eq!((r.precision, r.recall, r.f1, r.f_beta), (1.0, 1.0, 1.0, 1.0), "{r:?}");
    }
    let sig: serde_json::Value =
        serde_json::from_slice(&fs::read(report.out_dir.join("significance.json")).unwrap()).unwrap();
    assert_eq!(sig.as_array().unwrap().len(), 12);
    assert!(report.out_dir.join("report.json").exists());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_medanno"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    common::write_fixture_corpus(dir.path(), &cfg);
    let run = |fixtures: &str| {
        bin()
            .args(["annotate", "--corpus"])
            .arg(dir.path().join("corpus.jsonl"))
            .arg("--out")
            .arg(dir.path().join("cli-out"))
            .arg("--fixtures")
            .arg(dir.path().join(fixtures))
            .status()
            .unwrap()
            .code()
    };
    assert_eq!(run("fixtures.jsonl"), Some(0));
    assert_eq!(fs::read(dir.path().join("cli-out/llm-ensemble.jsonl")).unwrap(), {
        run_annotate(&cfg).unwrap();
        fs::read(cfg.out_dir.join("llm-ensemble.jsonl")).unwrap()
    });

    write_jsonl::<FixtureRecord>(&dir.path().join("none.jsonl"), &[]).unwrap();
    assert_eq!(run("none.jsonl"), Some(2));
    assert_eq!(run("does-not-exist.jsonl"), Some(1));
    assert_eq!(bin().args(["annotate", "--bogus"]).status().unwrap().code(), Some(1));
}

#[test]
fn cli_evaluate_and_diff_regress_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "out");
    common::write_fixture_corpus(dir.path(), &cfg);
    let gold = dir.path().join("gold.jsonl");

    let out = bin()
        .args(["evaluate", "--level", "phrase", "--mode", "vertical", "--gold"])
        .arg(&gold)
        .arg("--pred")
        .arg(&gold)
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let overall = csv.lines().find(|l| l.contains(",overall,")).unwrap();
    assert!(overall.ends_with(",1.0,1.0,1.0,1.0,2.0"), "{overall}");

    let status = bin()
        .arg("diff")
        .arg("--base")
        .arg(&gold)
        .arg("--refined")
        .arg(&gold)
        .arg("--out")
        .arg(dir.path().join("diff.csv"))
        .status()
        .unwrap();
    assert!(status.success());
    let diff = fs::read_to_string(dir.path().join("diff.csv")).unwrap();
    assert_eq!(
        diff.lines().next().unwrap(),
        "doc_id,rater_id,seconds_active,added,modified,deleted"
    );
    assert_eq!(diff.lines().count(), 4);
    // three identical rows cannot support a regression
    let status = bin()
        .arg("regress")
        .arg("--rows")
        .arg(dir.path().join("diff.csv"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

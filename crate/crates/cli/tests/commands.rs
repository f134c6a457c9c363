use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hashcbr_core::cbr::stream_line;
use hashcbr_core::synth::{heterogeneous, HeterogeneousSpec};

fn hashcbr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hashcbr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hashcbr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "k_w=8", "--set", "k_v=8", "--set", "hidden_width=16", "--bits", "16", "--epochs", "3",
];

fn with_small<'a>(base: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(SMALL).copied().collect()
}

#[test]
fn train_writes_checkpoint_logs_and_config_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let stdout = ok(&with_small(&["train", "--synthetic", "300", "--seed", "7", "--out", s(out)]));
        assert!(stdout.contains("final objective"));
    }
    for f in ["model.ckpt", "train_log.csv", "train_log.jsonl", "config.txt", "schema.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&with_small(&["train", "--synthetic", "200", "--seed", "3", "--out", s(&a)]));
    let b = dir.path().join("b");
    ok(&["train", "--config", s(&a.join("config.txt")), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn lsh_train_writes_a_seed_record() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--synthetic", "100", "--hash", "lsh", "--out", s(dir.path())]);
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("lsh.json")).unwrap()).unwrap();
    assert_eq!(rec["kind"], "lsh");
    assert_eq!(rec["bits"], 36);
    assert!(!dir.path().join("model.ckpt").exists());
}

#[test]
fn eval_writes_fold_reports() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["eval", "--synthetic", "300", "--folds", "3", "--out", s(dir.path())]));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["map_at"]["10"].is_number());
    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(fs::read_dir(dir.path().join("folds")).unwrap().count(), 3);
}

#[test]
fn eval_with_mismatched_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let lsh = dir.path().join("lsh.json");
    fs::write(&lsh, r#"{"kind":"lsh","dim":7,"bits":16,"seed":1}"#).unwrap();
    let out = hashcbr(&["eval", "--synthetic", "100", "--checkpoint", s(&lsh), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = hashcbr(&["train", "--synthetic", "100", "--set", "colour=red", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = hashcbr(&["train", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreadable_data_exits_with_one_and_bad_data_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.svm");
    let out = hashcbr(&["train", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let bad = dir.path().join("bad.svm");
    fs::write(&bad, "1 3:1 2:1\n").unwrap();
    let out = hashcbr(&["train", "--data", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn stream_file_logs_updates_and_skips_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let ds = heterogeneous(&HeterogeneousSpec { n: 400, ..Default::default() }, 9);
    let base = dir.path().join("base.svm");
    hashcbr_core::data::write_sparse_text(&base, &ds.cases[..100], None).unwrap();
    let mut lines: Vec<String> = ds.cases[100..350]
        .iter()
        .map(|c| stream_line(c, true))
        .collect();
    lines.insert(10, "not json".into());
    let stream = dir.path().join("queries.jsonl");
    fs::write(&stream, lines.join("\n") + "\n").unwrap();

    let stdout = ok(&with_small(&[
        "stream",
        "--data",
        s(&base),
        "--stream-file",
        s(&stream),
        "--out",
        s(dir.path()),
    ]));
    assert!(stdout.contains("250 queries, 2 updates, 1 skipped"), "{stdout}");
    let log = fs::read_to_string(dir.path().join("stream.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.iter().filter(|r| r["type"] == "update").count(), 2);
    assert_eq!(records.iter().filter(|r| r["type"] == "skipped").count(), 1);
}

#[test]
fn simulated_stream_honours_no_update() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&with_small(&[
        "stream",
        "--synthetic",
        "400",
        "--train-fraction",
        "0.25",
        "--no-update",
        "--out",
        s(dir.path()),
    ]));
    assert!(stdout.contains("300 queries, 0 updates"), "{stdout}");
}

#[test]
fn bench_reports_phases_per_size() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "bench",
        "--synthetic",
        "3000",
        "--fixture",
        "clustered",
        "--hash",
        "lsh",
        "--bits",
        "16",
        "--queries",
        "20",
        "--repetitions",
        "1",
        "--sizes",
        "1000,2980",
        "--out",
        s(dir.path()),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    let entries = report.as_array().unwrap();
    assert_eq!(entries.len(), 2);
    for e in entries {
        for phase in ["hash", "lookup", "rerank", "linear_scan"] {
            assert!(e[phase]["mean_us"].is_number(), "{phase}");
        }
        assert!(e["ratio"].is_number());
    }
}

#[test]
fn index_then_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = heterogeneous(&HeterogeneousSpec { n: 200, ..Default::default() }, 4);
    let data = dir.path().join("cases.svm");
    hashcbr_core::data::write_sparse_text(&data, &ds.cases, None).unwrap();
    let idx_dir = dir.path().join("idx");
    ok(&["index", "--data", s(&data), "--hash", "lsh", "--bits", "16", "--out", s(&idx_dir)]);
    assert!(idx_dir.join("index.bin").exists());

    let query: String = ds.cases[0]
        .features
        .iter()
        .map(|(i, v)| format!("{i}:{v}"))
        .collect::<Vec<_>>()
        .join(" ");
    let stdout = ok(&[
        "query",
        "--data",
        s(&data),
        "--checkpoint",
        s(&idx_dir.join("lsh.json")),
        "--index",
        s(&idx_dir.join("index.bin")),
        "--query",
        &query,
        "--out",
        s(&dir.path().join("q")),
    ]);
    let answer: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    // the query is case 0 itself, so it comes back first at distance zero
    assert_eq!(answer["neighbors"][0][0], 0);
    assert_eq!(answer["neighbors"][0][1], 0.0);
    assert!(answer["predicted"].is_string());
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sensecap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sensecap"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sensecap(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn train(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--input",
        "corp/train.jsonl",
        "--graph",
        "corp/graph.tsv",
        "--out",
        out,
        "--lr",
        "0.003",
        "--warmup-steps",
        "10",
    ];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

fn corpus(dir: &Path) {
    ok(dir, &["synth", "--kind", "memorization", "--seed", "5", "--out", "corp"]);
}

#[test]
fn unknown_subcommand_exits_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = sensecap(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn runtime_failure_exits_one_and_marks_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = sensecap(dir.path(), &["caption", "--model", "missing", "--input", "x.jsonl", "--out", "caps.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading model from missing"));
    let m = json(&dir.path().join("caps.jsonl.manifest.json"));
    assert_eq!(m["status"], "failed");
}

#[test]
fn no_color_output_has_no_escape_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sensecap"))
        .args(["frobnicate"])
        .env("NO_COLOR", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.stderr.contains(&0x1b));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    ok(d, &["ingest", "--graph", "corp/graph.tsv", "--out", "ingest.json"]);
    assert_eq!(json(&d.join("ingest.json"))["triples"], 24);
    ok(d, &["train-transe", "--graph", "corp/graph.tsv", "--epochs", "20", "--dim", "8", "--out", "transe.json"]);
    ok(d, &["filter", "--graph", "corp/graph.tsv", "--input", "corp/train.jsonl", "--out", "kb.jsonl"]);
    let kb = fs::read_to_string(d.join("kb.jsonl")).unwrap();
    assert_eq!(kb.lines().count(), 12);

    train(d, "ckpt", &["--epochs", "60"]);
    ok(d, &["caption", "--model", "ckpt", "--input", "corp/test.jsonl", "--kb", "kb.jsonl", "--out", "caps.jsonl"]);
    let records = fs::read_to_string(d.join("corp/test.jsonl")).unwrap().lines().count();
    assert_eq!(fs::read_to_string(d.join("caps.jsonl")).unwrap().lines().count(), records);

    let table =
        ok(d, &["eval", "--input", "corp/test.jsonl", "--captions", "caps.jsonl", "--vocab", "ckpt/vocab.txt", "--out", "r.json"]);
    assert!(table.contains("BLEU@4"));
    let report = json(&d.join("r.json"));
    let f1 = report["entity"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    ok(d, &["sweep-k", "--model", "ckpt", "--input", "corp/test.jsonl", "--grid", "0,20,40", "--out", "sweep.json"]);
    let rows = json(&d.join("sweep.json"))["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 3);
    for metric in ["precision", "recall", "f1"] {
        let min = rows.iter().map(|r| r["normalized"][metric].as_f64().unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(min, 0.0);
    }
}

#[test]
fn identical_inputs_and_seed_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    train(d, "a", &["--epochs", "3", "--seed", "9"]);
    train(d, "b", &["--epochs", "3", "--seed", "9"]);
    let hash = |p: &str| json(&d.join(p))["outputs"][0]["sha256"].clone();
    assert!(hash("a.manifest.json").is_string());
    assert_eq!(hash("a.manifest.json"), hash("b.manifest.json"));
    assert_eq!(fs::read(d.join("a/fit.json")).unwrap(), fs::read(d.join("b/fit.json")).unwrap());
    for out in ["c1.jsonl", "c2.jsonl"] {
        ok(d, &["caption", "--model", "a", "--input", "corp/test.jsonl", "--graph", "corp/graph.tsv", "--out", out]);
    }
    assert_eq!(fs::read(d.join("c1.jsonl")).unwrap(), fs::read(d.join("c2.jsonl")).unwrap());
    assert_eq!(hash("c1.jsonl.manifest.json"), hash("c2.jsonl.manifest.json"));
}

#[test]
fn flags_override_config_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    fs::write(d.join("run.cfg"), "epochs=2\nbatch_size=8\nnon_enrich=true\n").unwrap();
    train(d, "ckpt", &["--config", "run.cfg", "--epochs", "1"]);
    let m = json(&d.join("ckpt.manifest.json"));
    assert_eq!(m["config"]["train"]["epochs"], 1);
    assert_eq!(m["config"]["train"]["batch_size"], 8);
    assert_eq!(m["config_sources"]["epochs"], "flag");
    assert_eq!(m["config_sources"]["batch_size"], "file");
    assert_eq!(m["config_sources"]["dropout"], "default");
    let saved = fs::read_to_string(d.join("ckpt/train.cfg")).unwrap();
    assert!(saved.contains("non_enrich=true"));
    ok(d, &["caption", "--model", "ckpt", "--input", "corp/test.jsonl", "--out", "caps.jsonl"]);
    let m = json(&d.join("caps.jsonl.manifest.json"));
    assert_eq!(m["config_sources"]["non_enrich"], "checkpoint");
    assert_eq!(m["config"]["train"]["variant"]["non_enrich"], true);
}

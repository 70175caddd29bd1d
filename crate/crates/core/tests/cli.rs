use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use tablegraph::model::{load_checkpoint, HyperParams, Model};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tablegraph"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("TABLEGRAPH_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn count_json(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count()
}

fn synth(dir: &Path, n: usize, extra: &[&str]) {
    let n = n.to_string();
    let mut args = vec!["synth", "--n", &n, "--seed", "5", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&args);
}

const SMALL: &[&str] = &["--blocks", "1", "--dim", "8", "--seed", "2"];

fn train(data: &Path, out: &Path, epochs: usize) {
    let e = epochs.to_string();
    let mut args = vec!["train", "--data", p(data), "--out", p(out), "--epochs", &e];
    args.extend_from_slice(SMALL);
    ok(&args);
}

#[test]
fn synth_writes_pairs_and_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), 200, &[]);
    synth(b.path(), 200, &[]);
    assert_eq!(count_json(&a.path().join("chunk")), 200);
    assert_eq!(count_json(&a.path().join("structure")), 200);
    let manifest = read_json(&a.path().join("manifest.json"));
    assert_eq!(manifest["tables"].as_array().unwrap().len(), 200);
    for sub in ["manifest.json", "chunk/table_00000.json", "structure/table_00199.json"] {
        assert_eq!(fs::read(a.path().join(sub)).unwrap(), fs::read(b.path().join(sub)).unwrap());
    }
}

#[test]
fn synth_complicated_prob_one_flags_every_table() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), 40, &["--complicated-prob", "1"]);
    let manifest = read_json(&d.path().join("manifest.json"));
    assert!(manifest["tables"].as_array().unwrap().iter().all(|t| t["complicated"] == true));
}

#[test]
fn train_zero_epochs_keeps_initial_parameters() {
    let d = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    synth(d.path(), 5, &[]);
    train(d.path(), run.path(), 0);
    let (model, seed) = load_checkpoint(run.path().join("checkpoint.json")).unwrap();
    assert_eq!(seed, 2);
    let hyper = HyperParams {
        blocks: 1,
        epochs: 0,
        ..HyperParams::default()
    }
    .with_dim(8);
    assert_eq!(model.params, Model::init(hyper, 2).params);
    assert_eq!(fs::read_to_string(run.path().join("loss.csv")).unwrap(), "epoch,mean_loss\n");
}

#[test]
fn train_is_reproducible_and_loss_falls() {
    let d = tempfile::tempdir().unwrap();
    let (r1, r2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(d.path(), 20, &[]);
    train(d.path(), r1.path(), 4);
    train(d.path(), r2.path(), 4);
    for f in ["checkpoint.json", "loss.csv", "coverage.json"] {
        assert_eq!(fs::read(r1.path().join(f)).unwrap(), fs::read(r2.path().join(f)).unwrap(), "{f}");
    }
    let losses: Vec<f64> = fs::read_to_string(r1.path().join("loss.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 4);
    assert!(losses[3] < losses[0], "{losses:?}");
    let cov = read_json(&r1.path().join("coverage.json"));
    assert_eq!(cov["tables"], 20);
    assert!(cov["ratio"].as_f64().unwrap() > 0.9);
}

#[test]
fn train_reads_config_file_and_rejects_bad_values() {
    let d = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    synth(d.path(), 3, &[]);
    let cfg = d.path().join("train.toml");
    fs::write(&cfg, "seed = 9\n[hyper]\nblocks = 1\ndim = 8\nff_dim = 32\nepochs = 0\n").unwrap();
    ok(&["train", "--data", p(d.path()), "--out", p(run.path()), "--config", p(&cfg)]);
    let (model, seed) = load_checkpoint(run.path().join("checkpoint.json")).unwrap();
    assert_eq!((seed, model.hyper.blocks, model.hyper.dim), (9, 1, 8));

    let out = bin(&["train", "--data", p(d.path()), "--out", p(run.path()), "--dropout", "1.5"]);
    assert!(!out.status.success());
}

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

#[test]
fn infer_one_and_two_cell_tables() {
    let d = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    synth(d.path(), 5, &[]);
    train(d.path(), run.path(), 1);
    let chunks = d.path().join("mine");
    write(
        &chunks.join("pair.json"),
        r#"{"chunks": [{"pos": [0, 40, 0, 10], "text": "left"}, {"pos": [60, 100, 0, 10], "text": "right"}]}"#,
    );
    write(&chunks.join("solo.json"), r#"{"chunks": [{"pos": [0, 40, 0, 10], "text": "only"}]}"#);
    let pred = d.path().join("pred");
    let ckpt = run.path().join("checkpoint.json");
    ok(&["infer", "--checkpoint", p(&ckpt), "--chunks", p(&chunks), "--out", p(&pred), "--dump-edges"]);
    let s = read_json(&pred.join("pair.json"));
    let cells = s["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    let edges = read_json(&pred.join("edges/pair.json"));
    assert_eq!(edges.as_array().unwrap().len(), 1);
    assert_eq!(edges[0]["logits"].as_array().unwrap().len(), 3);
    assert_eq!(read_json(&pred.join("solo.json"))["cells"].as_array().unwrap().len(), 1);
}

#[test]
fn infer_with_corrupt_checkpoint_writes_nothing() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), 2, &[]);
    let ckpt = d.path().join("bad.json");
    fs::write(&ckpt, "{\"format\": \"something else\"}").unwrap();
    let pred = d.path().join("pred");
    let out = bin(&["infer", "--checkpoint", p(&ckpt), "--chunks", p(&d.path().join("chunk")), "--out", p(&pred)]);
    assert!(!out.status.success());
    assert!(!pred.exists());
}

#[test]
fn infer_reports_failed_tables() {
    let d = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    synth(d.path(), 3, &[]);
    train(d.path(), run.path(), 0);
    let chunks = d.path().join("chunk");
    write(&chunks.join("zz_broken.json"), "{\"chunks\": [");
    let pred = d.path().join("pred");
    let out = bin(&["infer", "--checkpoint", p(&run.path().join("checkpoint.json")), "--chunks", p(&chunks), "--out", p(&pred)]);
    assert!(!out.status.success());
    assert_eq!(count_json(&pred), 3);
}

fn structure(cells: &[(&str, usize, usize, usize, usize)]) -> String {
    let cells: Vec<Value> = cells
        .iter()
        .enumerate()
        .map(|(id, &(content, sr, er, sc, ec))| {
            serde_json::json!({"id": id, "content": content, "start_row": sr, "end_row": er, "start_col": sc, "end_col": ec})
        })
        .collect();
    serde_json::json!({ "cells": cells }).to_string()
}

fn eval_dirs(pred: &Path, truth: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["eval", "--pred", p(pred), "--truth", p(truth)];
    args.extend_from_slice(extra);
    bin(&args)
}

#[test]
fn eval_identical_structures_score_one() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), 10, &[]);
    let s = d.path().join("structure");
    let report = d.path().join("report.json");
    let out = eval_dirs(&s, &s, &["--out", p(&report)]);
    assert!(out.status.success());
    let r = read_json(&report);
    assert_eq!(r["macro"]["f1"], 1.0);
    assert_eq!(r["micro"]["f1"], 1.0);
    assert!(report.with_extension("txt").exists());
}

#[test]
fn eval_two_table_fixture() {
    let d = tempfile::tempdir().unwrap();
    let (pred, truth) = (d.path().join("pred"), d.path().join("truth"));
    let pair = structure(&[("a", 0, 0, 0, 0), ("b", 0, 0, 1, 1)]);
    write(&pred.join("one.json"), &pair);
    write(&truth.join("one.json"), &pair);
    write(
        &truth.join("two.json"),
        &structure(&[("a", 0, 0, 0, 0), ("b", 0, 0, 1, 1), ("c", 1, 1, 0, 0), ("d", 1, 1, 1, 1)]),
    );
    write(
        &pred.join("two.json"),
        &structure(&[("a", 0, 0, 0, 0), ("b", 0, 0, 1, 1), ("c", 0, 0, 2, 2), ("d", 0, 0, 3, 3)]),
    );
    let report = d.path().join("r.json");
    assert!(eval_dirs(&pred, &truth, &["--out", p(&report)]).status.success());
    let r = read_json(&report);
    let close = |v: &Value, x: f64| (v.as_f64().unwrap() - x).abs() < 1e-12;
    assert!(close(&r["macro"]["p"], (1.0 + 2.0 / 3.0) / 2.0));
    assert!(close(&r["macro"]["r"], (1.0 + 0.5) / 2.0));
    assert!(close(&r["micro"]["p"], 0.75));
    assert!(close(&r["micro"]["r"], 0.6));
}

#[test]
fn eval_errors() {
    let d = tempfile::tempdir().unwrap();
    let (pred, truth) = (d.path().join("pred"), d.path().join("truth"));
    let plain = structure(&[("a", 0, 0, 0, 0), ("b", 0, 0, 1, 1)]);
    write(&pred.join("one.json"), &plain);
    write(&truth.join("one.json"), &plain);
    let out = eval_dirs(&pred, &truth, &["--only-complicated"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("complicated"));

    write(&truth.join("extra.json"), &plain);
    let out = eval_dirs(&pred, &truth, &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("extra"));
}

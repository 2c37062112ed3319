//! Command-line behaviour through `cli::run` and the built binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use dualre::checkpoint::{Checkpoint, Model};
use dualre::cli::run;
use dualre::config::RunConfig;
use dualre::corpus::{read_dataset, read_mentions, read_truth, DatasetFormat};
use dualre::evaluation::{read_rows, Summary};

fn dualre(args: &[&str]) -> i32 {
    run(std::iter::once("dualre").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn evaluate_on_own_noise_free_training_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(dualre(&["synth", "--out", s(&d.join("train.tsv")), "--trigger-noise", "0", "--seed", "2"]), 0);
    fs::write(
        d.join("c.conf"),
        "train_file = train.tsv\ntest_file = train.tsv\nlabeled_fraction = 1\nunlabeled_fraction = 0\n\
         predictor_batch_size = 4\npredictor_patience = 10\n",
    )
    .unwrap();
    let out = d.join("run");
    assert_eq!(dualre(&["train", "--method", "supervised", "--config", s(&d.join("c.conf")), "--out", s(&out)]), 0);
    let binary = env!("CARGO_BIN_EXE_dualre");
    let output = Command::new(binary)
        .args(["evaluate", "--checkpoint", s(&out.join("predictor.ckpt")), "--data", s(&d.join("train.tsv"))])
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!(report["f1"].as_f64().unwrap() >= 0.99, "{report}");
}

#[test]
fn train_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(dualre(&["synth", "--out", s(&d.join("train.jsonl")), "--seed", "5", "--vocab-size", "200"]), 0);
    assert_eq!(dualre(&["synth", "--out", s(&d.join("test.tsv")), "--seed", "6", "--vocab-size", "200"]), 0);
    fs::write(
        d.join("c.conf"),
        "# small run\ntrain_file = train.jsonl\ntest_file = test.tsv\npredictor_epochs = 5\nretriever_epochs = 5\niterations_cap = 2\n",
    )
    .unwrap();
    let out = d.join("run");
    assert_eq!(dualre(&["train", "--method", "dualre", "--config", s(&d.join("c.conf")), "--seed", "4", "--out", s(&out)]), 0);

    let resolved = RunConfig::load(&out.join("config.txt")).unwrap();
    assert_eq!(resolved.train.seed, 4);
    assert_eq!(resolved.train.iterations_cap, 2);
    assert_eq!(resolved.train_file, d.join("train.jsonl"));

    let rows = read_rows(&out.join("iterations.csv")).unwrap();
    assert_eq!(rows[0].iteration, 0);
    assert!(rows.iter().all(|r| r.run_id == "dualre" && r.seed == 4));
    let summary: Summary = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.groups[0].seeds, vec![4]);
    assert_eq!(summary.groups[0].final_metrics["test_f1"].std, 0.0);

    assert!(matches!(Checkpoint::load(&out.join("predictor.ckpt")).unwrap().model, Model::Predictor(_)));
    assert!(matches!(Checkpoint::load(&out.join("retriever.ckpt")).unwrap().model, Model::Retriever(_)));

    // report merges run tables
    let merged = d.join("report");
    let csv = out.join("iterations.csv");
    assert_eq!(dualre(&["report", "--input", s(&csv), s(&csv), "--out", s(&merged)]), 0);
    assert!(merged.join("summary.json").exists());
}

#[test]
fn split_writes_disjoint_parts_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("all.tsv");
    assert_eq!(dualre(&["synth", "--out", s(&data), "--examples-per-relation", "40", "--seed", "1"]), 0);
    let out = d.join("parts");
    assert_eq!(dualre(&["split", "--input", s(&data), "--out", s(&out), "--labeled-fraction", "0.2", "--seed", "3"]), 0);
    let (schema, all) = read_dataset(&data, DatasetFormat::Tabular).unwrap();
    let (_, labeled) = read_dataset(&out.join("labeled.tsv"), DatasetFormat::Tabular).unwrap();
    let (_, dev) = read_dataset(&out.join("dev.tsv"), DatasetFormat::Tabular).unwrap();
    let unlabeled = read_mentions(&out.join("unlabeled.tsv"), DatasetFormat::Tabular).unwrap();
    let truth = read_truth(&out.join("truth.tsv"), &schema).unwrap();
    assert_eq!(truth.len(), unlabeled.len());
    let mut ids: Vec<&str> = labeled.iter().map(|e| e.id()).chain(dev.iter().map(|e| e.id())).collect();
    ids.extend(unlabeled.iter().map(|m| m.id.as_str()));
    let n = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), n);
    assert!(n <= all.len());
}

#[test]
fn select_dumps_ranked_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(dualre(&["synth", "--out", s(&d.join("t.tsv")), "--seed", "8", "--vocab-size", "200"]), 0);
    fs::write(d.join("c.conf"), "train_file = t.tsv\ntest_file = t.tsv\npredictor_epochs = 5\nretriever_epochs = 5\nk = 12\n").unwrap();
    let out = d.join("batch.jsonl");
    assert_eq!(dualre(&["select", "--method", "dualre", "--config", s(&d.join("c.conf")), "--out", s(&out)]), 0);
    let lines: Vec<serde_json::Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty() && lines.len() <= 12);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["rank"].as_u64().unwrap(), i as u64 + 1);
        assert!(l["id"].is_string() && l["label"].is_string());
    }
    let product = |l: &serde_json::Value| l["p"].as_f64().unwrap() * l["q"].as_f64().unwrap();
    assert!(lines.windows(2).all(|w| product(&w[0]) >= product(&w[1])));
    assert_eq!(dualre(&["select", "--method", "gold", "--config", s(&d.join("c.conf"))]), 1);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.conf"), "alpha = 1\n").unwrap();
    let binary = env!("CARGO_BIN_EXE_dualre");
    let out = Command::new(binary)
        .args(["train", "--method", "dualre", "--config", s(&d.join("bad.conf")), "--out", s(&d.join("o"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("train_file") && err.contains("test_file"), "{err}");

    let out = Command::new(binary).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));
}

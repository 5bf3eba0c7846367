#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const FIXTURE_FILES: &[&str] = &[
    "annotations.jsonl",
    "config.json",
    "detections.jsonl",
    "eval_preds.jsonl",
    "eval_tasks.jsonl",
    "graphs.jsonl",
    "stuff.txt",
];

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy")
}

/// A scratch directory holding a copy of the toy fixture.
pub fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in FIXTURE_FILES {
        std::fs::copy(fixture_dir().join(f), dir.path().join(f)).unwrap();
    }
    dir
}

pub fn forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn forge")
}

pub fn forge_ok(dir: &Path, args: &[&str]) {
    let out = forge(dir, args);
    assert!(
        out.status.success(),
        "forge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every stage, in pipeline order, with the given thread count.
pub const PIPELINE: &[&[&str]] = &[
    &["sample", "--input", "graphs.jsonl", "--output", "samples.jsonl", "--report", "sample.json"],
    &["phrases", "--input", "graphs.jsonl", "--samples", "samples.jsonl", "--output", "tasks.jsonl", "--vocab", "vocab.json", "--report", "phrases.json"],
    &["qc", "--input", "annotations.jsonl", "--tasks", "tasks.jsonl", "--output", "selected.jsonl", "--report", "qc.json"],
    &["refine", "--input", "selected.jsonl", "--tasks", "tasks.jsonl", "--vocab", "vocab.json", "--output", "refined.jsonl", "--report", "refine.json"],
    &["channels", "--input", "detections.jsonl", "--output", "channels.jsonl"],
    &["train", "--input", "refined.jsonl", "--detections", "detections.jsonl", "--output", "model.ckpt", "--report", "train.json"],
    &["substitute", "--input", "refined.jsonl", "--detections", "detections.jsonl", "--vocab", "vocab.json", "--output", "subs.json"],
    &["predict", "--input", "refined.jsonl", "--detections", "detections.jsonl", "--model", "model.ckpt", "--substitutions", "subs.json", "--output", "preds.jsonl"],
    &["eval", "--tasks", "refined.jsonl", "--preds", "preds.jsonl", "--report", "eval.json"],
];

pub fn run_pipeline(dir: &Path, jobs: usize) {
    let jobs = jobs.to_string();
    for stage in PIPELINE {
        let mut args = vec!["--config", "config.json", "--jobs", &jobs];
        args.extend_from_slice(stage);
        forge_ok(dir, &args);
    }
}

/// File name to contents, for every file in `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        out.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    out
}

/// Names of files whose bytes differ, or that exist in only one snapshot.
pub fn differing(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut names: Vec<&String> = a.keys().chain(b.keys()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .filter(|n| a.get(*n) != b.get(*n))
        .cloned()
        .collect()
}

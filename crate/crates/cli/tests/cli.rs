mod common;

use common::*;
use serde_json::Value;

fn read_json(path: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eval_on_toy_fixture_is_perfect() {
    let dir = workspace();
    forge_ok(dir.path(), &["eval", "--tasks", "eval_tasks.jsonl", "--preds", "eval_preds.jsonl", "--report", "r.json"]);
    let r = read_json(&dir.path().join("r.json"));
    assert_eq!(r["overall"]["n_pairs"], 4);
    for key in ["mean_iou", "cum_iou", "pr@0.5", "pr@0.7", "pr@0.9"] {
        assert_eq!(r["overall"][key], 1.0, "{key}");
    }
    assert_eq!(r["subsets"]["stuff"]["n_pairs"], 1);
    assert_eq!(r["subsets"]["multi"]["n_pairs"], 1);
    assert!(r["subsets"]["rel"]["mean_iou"].is_null());

    let m = read_json(&dir.path().join("r.json.manifest.json"));
    assert_eq!(m["subcommand"], "eval");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"][0]["path"], "r.json");
}

#[test]
fn input_is_an_alias_for_tasks() {
    let dir = workspace();
    forge_ok(dir.path(), &["eval", "--input", "eval_tasks.jsonl", "--preds", "eval_preds.jsonl", "--report", "r.json"]);
}

#[test]
fn usage_errors_exit_2() {
    let dir = workspace();
    let out = forge(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = forge(dir.path(), &["eval", "--tasks", "eval_tasks.jsonl"]);
    assert_eq!(out.status.code(), Some(2));

    let out = forge(dir.path(), &["--jobs", "many", "sample", "--input", "graphs.jsonl", "--output", "s.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

fn single_json_error(out: &std::process::Output) -> Value {
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["error"].is_string());
    v
}

#[test]
fn data_errors_exit_1_with_one_json_line() {
    let dir = workspace();
    std::fs::write(dir.path().join("few.jsonl"), "").unwrap();
    let out = forge(dir.path(), &["eval", "--tasks", "eval_tasks.jsonl", "--preds", "few.jsonl", "--report", "r.json"]);
    let v = single_json_error(&out);
    assert_eq!(v["kind"], "evaluation");
    assert!(v["error"].as_str().unwrap().contains("missing prediction"));
    assert!(!dir.path().join("r.json").exists());

    let out = forge(dir.path(), &["sample", "--input", "nope.jsonl", "--output", "s.jsonl"]);
    assert_eq!(single_json_error(&out)["kind"], "io");

    std::fs::write(dir.path().join("bad.jsonl"), "{\"image_id\":1}\n").unwrap();
    let out = forge(dir.path(), &["sample", "--input", "bad.jsonl", "--output", "s.jsonl"]);
    assert_eq!(single_json_error(&out)["kind"], "record");

    std::fs::write(dir.path().join("bad.jsonl"), "[1, 2]\n").unwrap();
    let out = forge(dir.path(), &["eval", "--tasks", "eval_tasks.jsonl", "--preds", "bad.jsonl", "--report", "r.json"]);
    let v = single_json_error(&out);
    assert_eq!(v["kind"], "parse");
    assert!(v["error"].as_str().unwrap().contains("line 1"), "{v}");
}

#[test]
fn config_typos_are_rejected() {
    let dir = workspace();
    std::fs::write(dir.path().join("typo.json"), r#"{"qc": {"iou_coeficient": 0.5}}"#).unwrap();
    let out = forge(dir.path(), &["--config", "typo.json", "sample", "--input", "graphs.jsonl", "--output", "s.jsonl"]);
    let v = single_json_error(&out);
    assert_eq!(v["kind"], "config");
    assert!(v["error"].as_str().unwrap().contains("iou_coeficient"));
}

#[test]
fn overrides_and_seed_are_recorded() {
    let dir = workspace();
    forge_ok(dir.path(), &["--config", "config.json", "--seed", "5", "sample", "--input", "graphs.jsonl", "--output", "s.jsonl"]);
    let m = read_json(&dir.path().join("s.jsonl.manifest.json"));
    assert_eq!(m["seed"], 5);
    let overrides: Vec<&str> = m["overrides"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(overrides.contains(&"seed"));
    assert!(overrides.contains(&"model.embed_dim"));
    assert!(overrides.contains(&"stuff_list"));
    assert!(!overrides.iter().any(|o| o.starts_with("qc")));
    assert_eq!(m["inputs"][0]["role"], "config");
}

#[test]
fn pipeline_filters_and_refines_the_toy_world() {
    let dir = workspace();
    run_pipeline(dir.path(), 2);
    let qc = read_json(&dir.path().join("qc.json"));
    let status = |w: &str| {
        qc["workers"]
            .as_array()
            .unwrap()
            .iter()
            .find(|x| x["worker_id"] == w)
            .map(|x| x["status"].as_str().unwrap().to_string())
            .unwrap()
    };
    assert_eq!(status("alice"), "trusted");
    assert_eq!(status("mallory"), "untrusted");
    assert_eq!(status("dave"), "ignored");
    assert_eq!(qc["annotations_unknown_task"], 1);

    let refine = read_json(&dir.path().join("refine.json"));
    assert_eq!(refine["tasks_refined"], 60);
    for p in refine["provenance"].as_array().unwrap() {
        if p["worker_id"] == "bob" {
            assert_eq!(p["events"][0]["event"], "merged_by_box");
        }
        assert_eq!(p["instances"], 1);
    }
    let phrases = read_json(&dir.path().join("phrases.json"));
    assert_eq!(phrases["heuristics"]["unique_attribute"], 2);
    assert_eq!(phrases["heuristics"]["unique_relationship"], 2);

    let subs = read_json(&dir.path().join("subs.json"));
    for (k, e) in subs["entries"].as_object().unwrap() {
        assert_eq!(e["substitute"].as_str().unwrap(), k, "detections are exact, so each category maps to itself");
    }
}

#[test]
fn reruns_are_byte_identical_across_job_counts() {
    let a = workspace();
    let b = workspace();
    let c = workspace();
    run_pipeline(a.path(), 1);
    run_pipeline(b.path(), 4);
    run_pipeline(c.path(), 4);
    let (sa, sb, sc) = (snapshot(a.path()), snapshot(b.path()), snapshot(c.path()));
    assert!(sa.len() > FIXTURE_FILES.len() + 9);
    assert_eq!(differing(&sa, &sb), Vec::<String>::new());
    assert_eq!(differing(&sb, &sc), Vec::<String>::new());
}

#[test]
fn seed_changes_the_draws() {
    let a = workspace();
    for seed in ["1", "2"] {
        let out = format!("tasks{seed}.jsonl");
        forge_ok(a.path(), &["--seed", seed, "sample", "--input", "graphs.jsonl", "--output", &format!("s{seed}.jsonl")]);
        forge_ok(a.path(), &["--seed", seed, "phrases", "--input", "graphs.jsonl", "--samples", &format!("s{seed}.jsonl"), "--output", &out]);
    }
    let t1 = std::fs::read(a.path().join("tasks1.jsonl")).unwrap();
    let t2 = std::fs::read(a.path().join("tasks2.jsonl")).unwrap();
    assert_ne!(t1, t2);
}

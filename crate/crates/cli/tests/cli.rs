use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_activeduel"));
    c.env("ACTIVEDUEL_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn activeduel")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{
  "env": {"num_generators": 5, "feature_dim": 8, "context_dim": 3},
  "enn": {"num_heads": 4, "hidden_size": 16, "train_steps": 10, "feature_dim": 8},
  "num_prompts": 40, "batch_size": 16, "method": "dts"
}"#;

#[test]
fn minimal_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"env": {"num_generators": 4}, "num_prompts": 64, "batch_size": 64, "method": "random"}"#,
    );
    let out = dir.path().join("out");
    let start = Instant::now();
    let o = run(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");

    let lines = fs::read_to_string(out.join("triplets.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 64);
    for line in lines.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 6);
        for side in ["chosen", "rejected"] {
            let s = v[side]["score"].as_f64().unwrap();
            assert!((1.0..=5.0).contains(&s));
        }
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.starts_with("iteration,prompts,cumulative_annotations"));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["triplets"], 64);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(out.join("checkpoint.json").exists());
}

#[test]
fn unknown_method_exits_2_naming_valid_set() {
    let o = run(&["run", "--method", "oracle-peek"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for m in ["random", "maxmin", "ultrafeedback", "deltaqwen", "infomax", "dts", "maxminlcb", "drts", "deltaucb"] {
        assert!(err.contains(m), "{err}");
    }
}

#[test]
fn invalid_config_exits_2_with_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.json", r#"{"num_prompts": 10, "batch_size": 64}"#);
    let o = run(&["run", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("num_prompts"));

    let cfg = write_config(dir.path(), "b.json", r#"{"enn": {"num_heads": 1, "bogus": 3}}"#);
    let o = run(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn same_seed_same_digest_and_resume_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for out in [&a, &b] {
        let o = run(&["run", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let digest = |p: &Path| {
        let m: Value = serde_json::from_str(&fs::read_to_string(p.join("manifest.json")).unwrap()).unwrap();
        m["dataset_sha256"].as_str().unwrap().to_string()
    };
    assert_eq!(fs::read(a.join("triplets.jsonl")).unwrap(), fs::read(b.join("triplets.jsonl")).unwrap());
    assert_eq!(digest(&a), digest(&b));

    let o = run(&["run", "--config", &cfg, "--seed", "7", "--out", c.to_str().unwrap(), "--max-iterations", "1"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(c.join("triplets.jsonl")).unwrap().lines().count(), 16);
    let o = run(&["resume", c.join("checkpoint.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("triplets.jsonl")).unwrap(), fs::read(c.join("triplets.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn analyze_reports_means_and_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let line = |p: usize, cs: f64, rs: f64| {
        format!(
            "{{\"prompt_id\":{p},\"iteration\":0,\"method\":\"dts\",\"chosen\":{{\"candidate_id\":0,\"generator_id\":1,\"score\":{cs}}},\"rejected\":{{\"candidate_id\":1,\"generator_id\":2,\"score\":{rs}}},\"tie\":false}}\n"
        )
    };
    let good = dir.path().join("good.jsonl");
    fs::write(&good, line(0, 4.0, 1.0) + &line(1, 5.0, 3.0)).unwrap();
    let o = run(&["analyze", good.to_str().unwrap()]);
    assert!(o.status.success());
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("dts,2,4.5,2,3.25,2.5,0"), "{report}");
    assert!(report.contains("1,2,0") && report.contains("2,0,2"), "{report}");

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, line(0, 4.0, 1.0) + "{\"prompt_id\": oops}\n").unwrap();
    let o = run(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = run(&["analyze", empty.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("no data"));
}

#[test]
fn prefix_eval_and_env_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL);
    let out = dir.path().join("run");
    assert!(run(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let data = out.join("triplets.jsonl");

    let o = run(&["prefix-eval", data.to_str().unwrap(), "--prefix-sizes", "16,40"]);
    assert!(o.status.success());
    let csv = String::from_utf8_lossy(&o.stdout).to_string();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("prefix,mean_chosen"));

    // Independent recomputation of the first prefix's mean delta.
    let text = fs::read_to_string(&data).unwrap();
    let delta: f64 = text
        .lines()
        .take(16)
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            v["chosen"]["score"].as_f64().unwrap() - v["rejected"]["score"].as_f64().unwrap()
        })
        .sum::<f64>()
        / 16.0;
    let reported: f64 = rows[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!((reported - delta).abs() < 1e-12);

    let o = run(&["prefix-eval", data.to_str().unwrap(), "--prefix-sizes", "41"]);
    assert!(!o.status.success());

    let dump = dir.path().join("env.json");
    assert!(run(&["dump-env", "--config", &cfg, "--out", dump.to_str().unwrap()]).status.success());
    let v: Value = serde_json::from_str(&fs::read_to_string(&dump).unwrap()).unwrap();
    assert_eq!(v["oracle_side"], true);
    assert_eq!(v["generators"].as_array().unwrap().len(), 5);

    let o = run(&["analyze", data.to_str().unwrap(), "--env-dump", dump.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("regret_total"));
}

#[test]
fn bernoulli_oracle_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL);
    let out = dir.path().join("b");
    let o = run(&["run", "--config", &cfg, "--oracle", "bernoulli", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("triplets.jsonl")).unwrap();
    assert!(text.contains("\"score\":5.0") && text.contains("\"score\":1.0"));
    assert_eq!(run(&["run", "--oracle", "human"]).status.code(), Some(2));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowsmc::oracle::ExactInstance;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn flowsmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowsmc")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn demo_search_finds_the_oracle_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixtures().join("demo_search.json");
    let out = flowsmc(&["search", "--config", s(&config), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("best reward 1.0000"));

    let inst = ExactInstance::load(fixtures().join("demo_instance.json")).unwrap();
    let argmax = (0..inst.len()).max_by(|&a, &b| inst.rewards()[a].total_cmp(&inst.rewards()[b])).unwrap();
    let best = std::fs::read_to_string(dir.path().join("best.txt")).unwrap();
    assert_eq!(best.trim_end(), inst.workflow(argmax).render());
    for f in ["config.json", "archive.jsonl", "rounds.jsonl", "rewards.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let report = flowsmc(&["report", "--out", s(dir.path())]);
    assert_eq!(report.status.code(), Some(0));
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("archive: 27 distinct workflows"), "{text}");
    let csv = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn repeated_searches_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixtures().join("demo_search.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(flowsmc(&["search", "--config", s(&config), "--seed", "5", "--out", s(&a)]).status.success());
    assert!(flowsmc(&["--workers", "3", "search", "--config", s(&config), "--seed", "5", "--out", s(&b)]).status.success());
    for f in ["archive.jsonl", "rounds.jsonl", "best.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let instance = fixtures().join("demo_instance.json");
    let config = dir.path().join("bad.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"N": 0, "K": 1, "M": 0, "T": 3, "prior": {{"kind": "tabular", "instance": "{0}"}},
                "reward": {{"kind": "tabular", "instance": "{0}"}}}}"#,
            s(&instance)
        ),
    )
    .unwrap();
    let out = flowsmc(&["search", "--config", s(&config), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("N must be at least 1"));
    assert_eq!(flowsmc(&["search"]).status.code(), Some(2));
    assert_eq!(flowsmc(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn metrics_command() {
    let dir = tempfile::tempdir().unwrap();
    let answers = dir.path().join("answers.json");
    let gold = dir.path().join("gold.jsonl");
    std::fs::write(&answers, r#"[["g", "x"], ["x", "x"]]"#).unwrap();
    std::fs::write(&gold, "\"g\"\n\"g\"\n").unwrap();
    let json = dir.path().join("m.json");
    let out = flowsmc(&["metrics", "--answers", s(&answers), "--gold", s(&gold), "--out", s(&json)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(m, serde_json::json!({"best": 0.5, "mean": 0.25, "majority": 0.0, "L": 2, "E": 2}));

    std::fs::write(&gold, "\"g\"\n").unwrap();
    let out = flowsmc(&["metrics", "--answers", s(&answers), "--gold", s(&gold)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_check_passes_on_the_shipped_instance() {
    let dir = tempfile::tempdir().unwrap();
    let instance = fixtures().join("instance_a.json");
    let out = flowsmc(&["--workers", "4", "oracle-check", "--config", s(&instance), "--out", s(dir.path())]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("[PASS] convergence"));
    assert_eq!(text.matches("[PASS] drift").count(), 3);
    assert!(dir.path().join("rounds.jsonl").exists());
    assert_eq!(std::fs::read_to_string(dir.path().join("posterior.csv")).unwrap().lines().count(), 28);
}

#[test]
fn oversized_instance_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let alphabet: Vec<String> = (0..1001).map(|i| format!("s{i}")).collect();
    let row = vec![1.0 / 1001.0; 1001];
    let mut rows = serde_json::Map::new();
    rows.insert(String::new(), serde_json::json!(row));
    for i in 0..1001 {
        rows.insert(i.to_string(), serde_json::json!(row));
    }
    let spec = serde_json::json!({
        "prior": {"alphabet": alphabet, "horizon": 2, "rows": rows},
        "reward": {"default": 0.0, "entries": []}
    });
    let path = dir.path().join("big.json");
    std::fs::write(&path, spec.to_string()).unwrap();
    let out = flowsmc(&["oracle-check", "--config", s(&path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

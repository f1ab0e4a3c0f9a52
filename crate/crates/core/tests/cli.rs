use std::path::Path;
use std::process::{Command, Output};

fn structura(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structura"))
        .current_dir(dir)
        .env_remove("STRUCTURA_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = structura(dir, args);
    assert!(
        out.status.success(),
        "`{}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn generated_corpora_validate() {
    let dir = tempfile::tempdir().unwrap();
    for task in ["arg-mining", "stance"] {
        let file = format!("{task}.json");
        ok(dir.path(), &["--seed", "3", "gen", "--preset", "tiny", "--task", task, "--out", &file]);
        ok(dir.path(), &["validate", "--data", &file]);
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(structura(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(structura(dir.path(), &["gen", "--preset", "huge", "--out", "x.json"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(structura(dir.path(), &["validate", "--data", "missing.json"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(structura(dir.path(), &["validate", "--data", "bad.json"]).status.code(), Some(2));
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "1", "gen", "--preset", "tiny", "--task", "stance", "--out", "train.json"]);
    ok(d, &["--seed", "2", "gen", "--preset", "tiny", "--task", "stance", "--split", "dev", "--out", "dev.json"]);
    ok(d, &["train-local", "--train", "train.json", "--out", "local.ckpt"]);
    ok(
        d,
        &[
            "--backend", "rand_constrained", "--restarts", "5", "train", "--train", "train.json", "--dev", "dev.json", "--init",
            "local.ckpt", "--out", "model.ckpt", "--history", "history.jsonl", "--max-epochs", "3",
        ],
    );
    ok(d, &["eval", "--data", "dev.json", "--checkpoint", "model.ckpt", "--report", "eval.json"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("eval.json")).unwrap()).unwrap();
    let f1 = report["average"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    let out = ok(d, &["infer", "--data", "dev.json", "--checkpoint", "model.ckpt"]);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["backend"], "exact");

    ok(d, &["bench", "--data", "dev.json", "--checkpoint", "model.ckpt", "--report", "bench.json"]);
    ok(d, &["sweep", "--data", "dev.json", "--checkpoint", "model.ckpt", "--restart-list", "1,5", "--report", "sweep.json"]);
    let history = std::fs::read_to_string(d.join("history.jsonl")).unwrap();
    assert!((1..=3).contains(&history.lines().count()));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn esglm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esglm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esglm(&["finetune", "--data", "x", "--task", "a"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = esglm(&["no-such-command"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esglm(&["--set", "bogus=3", "gen-fixture", "--out", "f"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    fs::write(tmp.path().join("bad.txt"), "top_k = 0\n").unwrap();
    let out = esglm(&["--config", "bad.txt", "gen-fixture", "--out", "f"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = esglm(&["vocab", "--corpus", "missing", "--out", "v.txt"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    fs::write(tmp.path().join("scores.csv"), "ticker,year,quarter,score\n").unwrap();
    fs::write(tmp.path().join("x.jsonl"), "").unwrap();
    let out = esglm(
        &["dataset", "--extracted", "x.jsonl", "--scores", "scores.csv", "--task", "a", "--out", "d"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_rejects_pretrained_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = "seq_len = 64\nvocab_size = 200\nhidden_dim = 8\nnum_layers = 1\nnum_heads = 2\nffn_dim = 16\npretrain_epochs = 1\nepochs = 1\n";
    fs::write(dir.join("c.txt"), cfg).unwrap();
    assert!(esglm(&["gen-fixture", "--out", "fx"], dir).status.success());
    let run = |args: &[&str]| {
        let mut all = vec!["--config", "c.txt"];
        all.extend_from_slice(args);
        let out = esglm(&all, dir);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["vocab", "--corpus", "fx/corpus", "--out", "v.txt"]);
    run(&["pretrain", "--corpus", "fx/corpus", "--vocab", "v.txt", "--out", "p.ckpt"]);
    run(&["extract", "--manifest", "fx/filings.jsonl", "--vocab", "v.txt", "--ckpt", "p.ckpt", "--out", "e.jsonl"]);
    run(&["dataset", "--extracted", "e.jsonl", "--scores", "fx/scores.csv", "--task", "b", "--out", "d"]);
    let out = esglm(&["evaluate", "--ckpt", "p.ckpt", "--data", "d", "--metrics", "m.json"], dir);
    assert_eq!(out.status.code(), Some(1));
    run(&["finetune", "--ckpt", "p.ckpt", "--data", "d", "--task", "b", "--out", "f.ckpt", "--metrics", "m.json"]);
    run(&["evaluate", "--ckpt", "f.ckpt", "--data", "d", "--metrics", "m2.json"]);
    let a: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("m.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("m2.json")).unwrap()).unwrap();
    for split in ["train", "validation", "test"] {
        assert_eq!(a[split], b[split]);
    }
    // a task-a dataset cannot feed a task-b run
    let out = esglm(&["--config", "c.txt", "finetune", "--ckpt", "p.ckpt", "--data", "d", "--task", "a", "--out", "g.ckpt", "--metrics", "g.json"], dir);
    assert_eq!(out.status.code(), Some(1));
}

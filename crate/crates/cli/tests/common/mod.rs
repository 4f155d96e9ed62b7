#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn bundled_corpus() -> PathBuf {
    workspace_root().join("data/synthetic_corpus.jsonl")
}

pub fn modq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modq"))
        .args(args)
        .env_remove("MODQ_OUT")
        .env_remove("RUST_LOG")
        .output()
        .expect("modq runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A quick experiment: small corpus, small network, few passes.
pub fn small_config(dir: &Path, trials: usize) -> PathBuf {
    let corpus = dir.join("corpus.jsonl");
    let out = modq(&["gen-corpus", "--out", corpus.to_str().unwrap(), "--num-docs", "400", "--seed", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    write_config(
        dir,
        json!({
            "dataset": {"path": "corpus.jsonl"},
            "split": {"seed": 1, "eval_seed": 2},
            "trials": trials,
            "model": {"kind": "mlp", "train": {"epochs": 8, "hidden_size": 32}},
            "uncertainty": {"mode": "mcd", "passes": 10, "seed": 3},
            "output_dir": "out",
        }),
    )
}

pub fn write_config(dir: &Path, cfg: Value) -> PathBuf {
    let path = dir.join("exp.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Every regular file below `root`, relative path and bytes, sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

//! Helpers for driving the `tts` binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn tts() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tts"));
    cmd.env_remove("TTS_WORKERS");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    tts().args(args).output().expect("spawn tts")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Small history plus a model trained on all of it.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: PathBuf,
    pub model: PathBuf,
    pub settings: PathBuf,
}

pub const SMALL_SETTINGS: &str = r#"
[synth]
n_files = 60
n_tests = 20
n_days = 40
commits_per_day = 4
random_rules = 4

[train]
train_days = 20
val_days = 7

[[train.grid]]
n_trees = 20
max_depth = 3
"#;

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let settings = dir.path().join("settings.toml");
    std::fs::write(&settings, SMALL_SETTINGS).unwrap();
    let data = dir.path().join("data");
    let out = run(&["--config", p(&settings), "synth", "--seed", "1", "--out-dir", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = dir.path().join("model.json");
    let out = run(&[
        "--config",
        p(&settings),
        "train",
        "--commits",
        p(&data.join("commits.jsonl")),
        "--results",
        p(&data.join("results.jsonl")),
        "--out",
        p(&model),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    Fixture {
        dir,
        data,
        model,
        settings,
    }
}

pub fn commit_line(id: &str, ts: i64, paths: &[&str]) -> String {
    let files: Vec<String> = paths
        .iter()
        .map(|p| format!(r#"{{"path":"{p}","type":"modified","add":3,"del":1}}"#))
        .collect();
    format!(r#"{{"id":"{id}","ts":{ts},"author":"dev","files":[{}]}}"#, files.join(",")) + "\n"
}

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const MICRO: &str = r#"
[model]
width = 8
latents = 4
stages = 2
heads = 2
ff_mult = 2
input_hidden = 8

[model.space]
bands = 3
scale = 1.0

[model.time]
bands = 2
scale = 1.0

[train]
eval_every = 2

[data]
timesteps = 60
"#;

pub fn omnifield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omnifield"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = omnifield(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing command.
pub fn fail(args: &[&str]) -> (i32, String) {
    let out = omnifield(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
    (out.status.code().unwrap(), err.trim_end().to_string())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn write_micro(dir: &Path) -> PathBuf {
    let path = dir.join("micro.toml");
    fs::write(&path, MICRO).unwrap();
    path
}

/// Every file under `dir`, relative path and bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

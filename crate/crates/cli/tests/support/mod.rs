#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub const BIN: &str = env!("CARGO_BIN_EXE_cotloop");

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("not JSON ({e}): {}\n{}", self.stdout, self.stderr))
    }
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
        }
    }
}

/// Runs the binary in `dir` with a clean `COTLOOP_*` environment plus `env`.
pub fn cotloop(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(args).env("COTLOOP_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("COTLOOP_") && k != "COTLOOP_LOG" {
            cmd.env_remove(k);
        }
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("cotloop runs").into()
}

/// A pipeline config using the improving mock and the mock trainer.
pub fn mock_config(dir: &Path, k: usize, curve: &[(u64, f64)], max_attempts: u32, seed: u64) {
    let points: Vec<String> = curve.iter().map(|(s, p)| format!("\"{s}\" = {p}")).collect();
    let text = format!(
        r#"store = "store"
dataset = "data/train.jsonl"
base_model = "m0"

[partition]
k = {k}

[engine]
max_attempts = {max_attempts}

[generator]
name = "mock"
kind = "improving_mock"
seed = {seed}
curve = {{ {} }}
"#,
        points.join(", ")
    );
    std::fs::write(dir.join("cotloop.toml"), text).unwrap();
}

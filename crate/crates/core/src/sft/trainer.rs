//! Out-of-process fine-tuning behind a small contract.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{SftError, SftManifest};
use crate::io::IoError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trained {
    pub model_id: String,
    pub metadata: BTreeMap<String, String>,
}

pub trait Trainer: Send + Sync {
    /// Fine-tunes `base` on the exported file and returns the new model id.
    fn train(&self, base: &str, data: &Path, manifest: &SftManifest) -> Result<Trained, SftError>;
}

/// Names the model after the set it saw: `<base>+<manifest hash>`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockTrainer;

impl Trainer for MockTrainer {
    fn train(&self, base: &str, _data: &Path, manifest: &SftManifest) -> Result<Trained, SftError> {
        let mut metadata = BTreeMap::new();
        metadata.insert("trainer".into(), "mock".into());
        Ok(Trained { model_id: format!("{base}+{}", manifest.manifest_hash), metadata })
    }
}

/// Runs `<program> [args] --base <id> --data <path> --out-id-file <path>`
/// and reads the new id from the out file.
#[derive(Debug, Clone)]
pub struct CommandTrainer {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
    pub work_dir: PathBuf,
}

impl Trainer for CommandTrainer {
    fn train(&self, base: &str, data: &Path, manifest: &SftManifest) -> Result<Trained, SftError> {
        std::fs::create_dir_all(&self.work_dir).map_err(|e| IoError::io(&self.work_dir, e))?;
        let out_file = self.work_dir.join(format!("model-id-{}.txt", manifest.upto_iteration));
        let _ = std::fs::remove_file(&out_file);
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg("--base")
            .arg(base)
            .arg("--data")
            .arg(data)
            .arg("--out-id-file")
            .arg(&out_file)
            .stdin(Stdio::null())
            .spawn()
            .map_err(|e| SftError::TrainerFailed(format!("cannot start {}: {e}", self.program)))?;
        let started = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if started.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(SftError::TrainerTimeout(self.timeout));
                }
                Ok(None) => thread::sleep(Duration::from_millis(20)),
                Err(e) => return Err(SftError::TrainerFailed(e.to_string())),
            }
        };
        if !status.success() {
            return Err(SftError::TrainerFailed(format!("{} exited with {status}", self.program)));
        }
        let id = std::fs::read_to_string(&out_file)
            .map_err(|e| SftError::TrainerFailed(format!("no model id written: {e}")))?
            .trim()
            .to_string();
        if id.is_empty() {
            return Err(SftError::TrainerFailed("empty model id".into()));
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("trainer".into(), "command".into());
        metadata.insert("program".into(), self.program.clone());
        Ok(Trained { model_id: id, metadata })
    }
}

/// `POST {endpoint}/train {base, data_url}`. The reply carries either the
/// model id or a job id polled at `GET {endpoint}/train/{job}`.
#[derive(Debug, Clone)]
pub struct HttpTrainer {
    pub endpoint: String,
    pub timeout: Duration,
    pub poll_interval: Duration,
}

#[derive(Deserialize)]
struct TrainReply {
    #[serde(default)]
    model_id: Option<String>,
    #[serde(default)]
    job_id: Option<String>,
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

impl HttpTrainer {
    fn fetch(&self, req: reqwest::blocking::RequestBuilder) -> Result<TrainReply, SftError> {
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                SftError::TrainerTimeout(self.timeout)
            } else {
                SftError::TrainerFailed(e.to_string())
            }
        })?;
        let status = resp.status();
        let body = resp.text().map_err(|e| SftError::TrainerFailed(e.to_string()))?;
        if !status.is_success() {
            return Err(SftError::TrainerFailed(format!("HTTP {status}: {body}")));
        }
        serde_json::from_str(&body).map_err(|e| SftError::TrainerFailed(format!("bad trainer reply: {e}")))
    }
}

impl Trainer for HttpTrainer {
    fn train(&self, base: &str, data: &Path, _manifest: &SftManifest) -> Result<Trained, SftError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| SftError::TrainerFailed(e.to_string()))?;
        let root = self.endpoint.trim_end_matches('/');
        let data = std::path::absolute(data).map_err(|e| IoError::io(data, e))?;
        let body = serde_json::json!({"base": base, "data_url": format!("file://{}", data.display())});
        let started = Instant::now();
        let mut reply = self.fetch(client.post(format!("{root}/train")).json(&body))?;
        loop {
            if reply.status.as_deref() == Some("failed") {
                return Err(SftError::TrainerFailed(reply.error.unwrap_or_else(|| "job failed".into())));
            }
            if let Some(id) = reply.model_id {
                let mut metadata = BTreeMap::new();
                metadata.insert("trainer".into(), "http".into());
                metadata.insert("endpoint".into(), root.to_string());
                return Ok(Trained { model_id: id, metadata });
            }
            let Some(job) = reply.job_id else {
                return Err(SftError::TrainerFailed("reply has neither model_id nor job_id".into()));
            };
            if started.elapsed() >= self.timeout {
                return Err(SftError::TrainerTimeout(self.timeout));
            }
            thread::sleep(self.poll_interval);
            reply = self.fetch(client.get(format!("{root}/train/{job}")))?;
            reply.job_id.get_or_insert(job);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    #[default]
    Mock,
    Command,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub kind: TrainerKind,
    /// Program and leading arguments for the command trainer.
    pub command: Vec<String>,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub poll_ms: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig { kind: TrainerKind::Mock, command: Vec::new(), endpoint: None, timeout_secs: 24 * 3600, poll_ms: 5000 }
    }
}

pub fn build_trainer(config: &TrainerConfig, work_dir: &Path) -> Result<Box<dyn Trainer>, String> {
    let timeout = Duration::from_secs(config.timeout_secs.max(1));
    match config.kind {
        TrainerKind::Mock => Ok(Box::new(MockTrainer)),
        TrainerKind::Command => {
            let (program, args) = config.command.split_first().ok_or("command trainer needs `command`")?;
            Ok(Box::new(CommandTrainer {
                program: program.clone(),
                args: args.to_vec(),
                timeout,
                work_dir: work_dir.to_path_buf(),
            }))
        }
        TrainerKind::Http => {
            let endpoint = config.endpoint.clone().ok_or("http trainer needs `endpoint`")?;
            Ok(Box::new(HttpTrainer { endpoint, timeout, poll_interval: Duration::from_millis(config.poll_ms) }))
        }
    }
}

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::backend::{Backend, ChatRequest, REASONING_TEMPERATURE};
use crate::engine::{extract_answer, verify, PromptTemplate};
use crate::io::{self, IoError};
use crate::model::{QaDataset, Question};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Temperature 0 with a narrow nucleus.
    #[default]
    Deterministic,
    /// Temperature 0.6, for reasoning models.
    Reasoning,
}

impl Mode {
    fn request(self, model: &str, q: &Question, template: &PromptTemplate) -> ChatRequest {
        let messages = template.render(q);
        match self {
            Mode::Deterministic => ChatRequest::new(model, messages, 0.0).deterministic(),
            Mode::Reasoning => ChatRequest::new(model, messages, REASONING_TEMPERATURE)
                .with_seed(crate::backend::derive_seed(0, &q.id, 0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
    /// No answer could be extracted from the reply.
    Unanswered,
}

/// One line of the audit transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub question_id: String,
    pub prompt: String,
    pub response: String,
    pub extracted: Option<String>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub model: String,
    pub dataset_version: String,
    pub dataset_hash: String,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRun {
    pub model: String,
    pub dataset_version: String,
    pub mode: Mode,
    /// In dataset order.
    pub entries: Vec<TranscriptEntry>,
    pub started_at: DateTime<Utc>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub correct: u64,
    pub incorrect: u64,
    pub unanswered: u64,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.correct + self.incorrect + self.unanswered
    }

    pub fn add(mut self, o: Outcome) -> Tally {
        match o {
            Outcome::Correct => self.correct += 1,
            Outcome::Incorrect => self.incorrect += 1,
            Outcome::Unanswered => self.unanswered += 1,
        }
        self
    }
}

impl ExamRun {
    pub fn tally(&self) -> Tally {
        self.entries.iter().fold(Tally::default(), |t, e| t.add(e.outcome))
    }
}

/// Asks one question and classifies the reply.
pub fn ask(q: &Question, backend: &dyn Backend, model: &str, mode: Mode, template: &PromptTemplate) -> Result<TranscriptEntry, EvalError> {
    let request = mode.request(model, q, template);
    let reply = backend.complete(&request)?;
    let (extracted, outcome) = match extract_answer(&reply.text, q) {
        Ok(e) => {
            let outcome = if verify(&e.answer, &q.answer_key) { Outcome::Correct } else { Outcome::Incorrect };
            (Some(e.answer.to_string()), outcome)
        }
        Err(_) => (None, Outcome::Unanswered),
    };
    Ok(TranscriptEntry { question_id: q.id.clone(), prompt: request.user_text(), response: reply.text, extracted, outcome })
}

pub struct ExamParams<'a> {
    pub model: &'a str,
    pub mode: Mode,
    pub template: &'a PromptTemplate,
    pub concurrency: usize,
    /// Transcript to append to and resume from; `<path>.meta.json` records
    /// what the run belongs to.
    pub transcript: Option<&'a Path>,
}

fn header_path(transcript: &Path) -> PathBuf {
    let mut s = transcript.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

/// Each question once; answers already in the transcript are reused, so
/// a run aborted by a backend error picks up where it stopped.
pub fn run_exam(dataset: &QaDataset, backend: &dyn Backend, params: &ExamParams<'_>) -> Result<ExamRun, EvalError> {
    if let Some(q) = dataset.items.iter().find(|q| !q.format.is_mcq()) {
        return Err(EvalError::NotMultipleChoice(q.id.clone()));
    }
    let started_at = Utc::now();
    let clock = Instant::now();
    let header = RunHeader {
        model: params.model.to_string(),
        dataset_version: dataset.version.clone(),
        dataset_hash: dataset.manifest_hash.clone(),
        mode: params.mode,
    };
    let mut done: HashMap<String, TranscriptEntry> = HashMap::new();
    if let Some(path) = params.transcript {
        let hp = header_path(path);
        if hp.exists() && path.exists() {
            let previous: RunHeader = io::read_json_file(&hp)?;
            if previous != header {
                return Err(EvalError::RunMismatch(hp.display().to_string()));
            }
            let known: HashSet<&str> = dataset.items.iter().map(|q| q.id.as_str()).collect();
            let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                // a torn last line from an interrupted run is simply redone
                if let Ok(e) = serde_json::from_str::<TranscriptEntry>(line) {
                    if known.contains(e.question_id.as_str()) {
                        done.insert(e.question_id.clone(), e);
                    }
                }
            }
        } else {
            io::write_atomic(path, b"")?;
            io::write_json_file(&hp, &header)?;
        }
    }
    let todo: Vec<&Question> = dataset.items.iter().filter(|q| !done.contains_key(&q.id)).collect();
    let sink = Mutex::new(());
    let fresh = par::try_map(&todo, params.concurrency, |q| {
        let entry = ask(q, backend, params.model, params.mode, params.template)?;
        if let Some(path) = params.transcript {
            let _guard = sink.lock().expect("transcript lock");
            io::append_jsonl(path, &entry)?;
        }
        Ok::<_, EvalError>(entry)
    })?;
    for e in fresh {
        done.insert(e.question_id.clone(), e);
    }
    let entries = dataset.items.iter().map(|q| done.remove(&q.id).expect("every question answered")).collect();
    Ok(ExamRun {
        model: params.model.to_string(),
        dataset_version: dataset.version.clone(),
        mode: params.mode,
        entries,
        started_at,
        elapsed_ms: clock.elapsed().as_millis() as u64,
    })
}

//! Questions the model could not solve, awaiting expert chain-of-thought.
//!
//! The queue is a single JSON file shared between the pipeline and the
//! annotation service. Every operation is a locked read-modify-write, so
//! both processes can use it at once.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::extract::verify;
use crate::io::{self, IoError};
use crate::model::{CotRecord, Question, RecordSource};

/// Default minimum length (in characters) of an expert chain of thought.
pub const DEFAULT_MIN_EXPERT_COT_CHARS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub chain_of_thought: String,
    pub final_answer: String,
    pub annotator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdmitError {
    #[error("annotated answer {given:?} does not match the answer key")]
    AnswerMismatch { given: String },
    #[error("chain of thought has {chars} characters, minimum is {min}")]
    TooShort { chars: usize, min: usize },
}

impl AdmitError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AdmitError::AnswerMismatch { .. } => "ANSWER_MISMATCH",
            AdmitError::TooShort { .. } => "TOO_SHORT",
        }
    }
}

/// Validates an expert annotation and turns it into a record.
pub fn admit_expert_record(
    question: &Question,
    annotation: &Annotation,
    iteration: u32,
    min_cot_chars: usize,
) -> Result<CotRecord, AdmitError> {
    let answer = question
        .normalize(&annotation.final_answer)
        .map_err(|_| AdmitError::AnswerMismatch { given: annotation.final_answer.clone() })?;
    if !verify(&answer, &question.answer_key) {
        return Err(AdmitError::AnswerMismatch { given: annotation.final_answer.clone() });
    }
    let cot = annotation.chain_of_thought.trim();
    let chars = cot.chars().count();
    if chars < min_cot_chars {
        return Err(AdmitError::TooShort { chars, min: min_cot_chars });
    }
    Ok(CotRecord {
        question_id: question.id.clone(),
        chain_of_thought: cot.to_string(),
        final_answer: answer,
        source: RecordSource::Expert,
        iteration,
        created_by: annotation.annotator.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAttempts {
    pub attempts: u32,
    /// One rejected reasoning trace, for context.
    pub sample_rejected_cot: Option<String>,
    pub sample_rejected_answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardCase {
    pub question: Question,
    pub iteration: u32,
    pub status: CaseStatus,
    pub failed: FailedAttempts,
    pub enqueued_at: DateTime<Utc>,
    #[serde(default)]
    pub record: Option<CotRecord>,
    #[serde(default)]
    pub annotated_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("no hard case with id {0}")]
    NotFound(String),
    #[error("hard case {0} is already annotated")]
    AlreadyAnnotated(String),
    #[error(transparent)]
    Rejected(#[from] AdmitError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct QueueFile {
    cases: BTreeMap<String, HardCase>,
}

pub struct HardCaseQueue {
    path: PathBuf,
    lock_path: PathBuf,
    guard: Mutex<()>,
}

impl HardCaseQueue {
    pub fn open(path: impl Into<PathBuf>) -> HardCaseQueue {
        let path = path.into();
        let mut lock = path.as_os_str().to_owned();
        lock.push(".lock");
        HardCaseQueue { path, lock_path: lock.into(), guard: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn with_lock<T>(&self, f: impl FnOnce(&mut QueueFile) -> Result<(T, bool), QueueError>) -> Result<T, QueueError> {
        let _in_process = self.guard.lock().expect("queue mutex");
        io::ensure_parent(&self.lock_path)?;
        let lock_file: File = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&self.lock_path)
            .map_err(|e| IoError::io(&self.lock_path, e))?;
        lock_file.lock().map_err(|e| IoError::io(&self.lock_path, e))?;
        let mut state: QueueFile = if self.path.exists() { io::read_json_file(&self.path)? } else { QueueFile::default() };
        let (out, dirty) = f(&mut state)?;
        if dirty {
            io::write_json_file(&self.path, &state)?;
        }
        Ok(out)
    }

    /// Adds a case unless one already exists for the question.
    pub fn enqueue(&self, question: &Question, iteration: u32, failed: FailedAttempts) -> Result<bool, QueueError> {
        self.with_lock(|s| {
            if s.cases.contains_key(&question.id) {
                return Ok((false, false));
            }
            s.cases.insert(
                question.id.clone(),
                HardCase {
                    question: question.clone(),
                    iteration,
                    status: CaseStatus::Pending,
                    failed,
                    enqueued_at: Utc::now(),
                    record: None,
                    annotated_at: None,
                },
            );
            Ok((true, true))
        })
    }

    pub fn list(&self, status: Option<CaseStatus>) -> Result<Vec<HardCase>, QueueError> {
        self.with_lock(|s| {
            let out = s.cases.values().filter(|c| status.is_none_or(|st| c.status == st)).cloned().collect();
            Ok((out, false))
        })
    }

    pub fn get(&self, id: &str) -> Result<Option<HardCase>, QueueError> {
        self.with_lock(|s| Ok((s.cases.get(id).cloned(), false)))
    }

    /// Validates and stores an expert annotation for a pending case.
    pub fn annotate(&self, id: &str, annotation: &Annotation, min_cot_chars: usize) -> Result<CotRecord, QueueError> {
        self.with_lock(|s| {
            let case = s.cases.get_mut(id).ok_or_else(|| QueueError::NotFound(id.to_string()))?;
            if case.status == CaseStatus::Done {
                return Err(QueueError::AlreadyAnnotated(id.to_string()));
            }
            let record = admit_expert_record(&case.question, annotation, case.iteration, min_cot_chars)?;
            case.status = CaseStatus::Done;
            case.record = Some(record.clone());
            case.annotated_at = Some(Utc::now());
            Ok((record, true))
        })
    }

    /// Expert records admitted so far for one iteration, keyed by question id.
    pub fn resolved(&self, iteration: u32) -> Result<BTreeMap<String, CotRecord>, QueueError> {
        self.with_lock(|s| {
            let out = s
                .cases
                .values()
                .filter(|c| c.iteration == iteration)
                .filter_map(|c| c.record.clone().map(|r| (c.question.id.clone(), r)))
                .collect();
            Ok((out, false))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn annotation(cot: &str, answer: &str) -> Annotation {
        Annotation { chain_of_thought: cot.into(), final_answer: answer.into(), annotator: "dr-li".into() }
    }

    fn wrong_letter(q: &Question) -> String {
        q.labels().find(|l| !q.answer_key.as_str().contains(*l)).unwrap().to_string()
    }

    #[test]
    fn admit_rules() {
        let q = &synthetic::corpus(1, 3)[0];
        let long = "x".repeat(200);
        let r = admit_expert_record(q, &annotation(&long, q.answer_key.as_str()), 2, 50).unwrap();
        assert_eq!(r.source, RecordSource::Expert);
        assert_eq!(r.iteration, 2);
        assert_eq!(r.final_answer, q.answer_key);
        let err = admit_expert_record(q, &annotation(&long, &wrong_letter(q)), 2, 50).unwrap_err();
        assert_eq!(err.code(), "ANSWER_MISMATCH");
        let err = admit_expert_record(q, &annotation("abc", q.answer_key.as_str()), 2, 50).unwrap_err();
        assert_eq!(err, AdmitError::TooShort { chars: 3, min: 50 });
        assert!(admit_expert_record(q, &annotation(&long, "——"), 2, 50).is_err());
    }

    #[test]
    fn queue_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let queue = HardCaseQueue::open(dir.path().join("hardcases.json"));
        let q = &synthetic::corpus(1, 4)[0];
        let failed = FailedAttempts { attempts: 8, sample_rejected_cot: Some("guess".into()), sample_rejected_answer: None };
        assert!(queue.enqueue(q, 1, failed.clone()).unwrap());
        assert!(!queue.enqueue(q, 1, failed).unwrap());
        assert_eq!(queue.list(Some(CaseStatus::Pending)).unwrap().len(), 1);

        let bad = queue.annotate(&q.id, &annotation(&"y".repeat(80), &wrong_letter(q)), 50);
        assert!(matches!(bad, Err(QueueError::Rejected(AdmitError::AnswerMismatch { .. }))));
        assert_eq!(queue.list(Some(CaseStatus::Pending)).unwrap().len(), 1);

        let good = annotation(&"y".repeat(80), q.answer_key.as_str());
        queue.annotate(&q.id, &good, 50).unwrap();
        assert!(queue.list(Some(CaseStatus::Pending)).unwrap().is_empty());
        assert!(matches!(queue.annotate(&q.id, &good, 50), Err(QueueError::AlreadyAnnotated(_))));
        assert!(matches!(queue.annotate("nope", &good, 50), Err(QueueError::NotFound(_))));
        assert_eq!(queue.resolved(1).unwrap().len(), 1);
        assert!(queue.resolved(2).unwrap().is_empty());

        let reopened = HardCaseQueue::open(dir.path().join("hardcases.json"));
        assert_eq!(reopened.list(None).unwrap().len(), 1);
    }
}

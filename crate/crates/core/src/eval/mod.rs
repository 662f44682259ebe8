//! Exam evaluation: one pass over a versioned exam, per-subset scores,
//! overall means, the leakage gap, and table rendering.

mod render;
mod run;
mod score;

use thiserror::Error;

use crate::backend::BackendError;
use crate::io::IoError;

pub use render::{render_report, render_reports, ReportFormat, ReportRow};
pub use run::{ask, run_exam, ExamParams, ExamRun, Mode, Outcome, RunHeader, Tally, TranscriptEntry};
pub use score::{
    leakage_gap, score, score_gap, sitting_keys, subset_key, ExamReport, Grouping, Score, Sitting, SubsetKey,
    SubsetScore,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("leakage gap needs non-empty key sets on both sides")]
    EmptyKeySet,
    #[error("old and new key sets overlap")]
    OverlappingKeys,
    #[error("report has no subset {0}")]
    UnknownKey(String),
    #[error("question {question_id} has no {key} to group by")]
    MissingGroupKey { question_id: String, key: String },
    #[error("question {0} is not in the dataset")]
    UnknownQuestion(String),
    #[error("question {0} is not multiple choice")]
    NotMultipleChoice(String),
    #[error("transcript {0} belongs to a different run")]
    RunMismatch(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] IoError),
}

//! Response shapes. None of them carries an answer key.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use cotloop_core::engine::{CaseStatus, HardCase};
use cotloop_core::eval::Score;
use cotloop_core::model::{Format, Origin, Question, QuestionOption, Subject};

use crate::scoring::SubmissionReport;
use crate::store::{Submission, VersionMeta};

/// A question as candidates see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicQuestion {
    pub id: String,
    pub stem: String,
    pub options: Vec<QuestionOption>,
    pub format: Format,
    pub subject: Subject,
    pub origin: Origin,
    pub year: Option<u16>,
    pub unit: Option<u8>,
}

impl From<&Question> for PublicQuestion {
    fn from(q: &Question) -> Self {
        PublicQuestion {
            id: q.id.clone(),
            stem: q.stem.clone(),
            options: q.options.clone(),
            format: q.format,
            subject: q.subject,
            origin: q.origin,
            year: q.year,
            unit: q.unit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetView {
    #[serde(flatten)]
    pub meta: VersionMeta,
    pub items: Vec<PublicQuestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionView {
    pub id: String,
    pub model_name: String,
    pub dataset_version: String,
    pub submitted_at: DateTime<Utc>,
    pub answered: usize,
    pub report: SubmissionReport,
}

impl From<&Submission> for SubmissionView {
    fn from(s: &Submission) -> Self {
        SubmissionView {
            id: s.id.clone(),
            model_name: s.model_name.clone(),
            dataset_version: s.dataset_version.clone(),
            submitted_at: s.submitted_at,
            answered: s.answers.len(),
            report: s.report.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub submission_id: String,
    pub model_name: String,
    pub overall: Score,
    pub overall_simple: Score,
    pub per_sitting: BTreeMap<String, Score>,
    pub per_unit: BTreeMap<String, Score>,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub version: String,
    pub tie_rule: String,
    pub total: usize,
    pub page: usize,
    pub per_page: usize,
    pub entries: Vec<LeaderboardEntry>,
}

pub const TIE_RULE: &str = "overall descending, then earlier submitted_at, then submission id";

/// Sorts into leaderboard order. The order is total: submission ids are
/// unique.
pub fn rank(submissions: &mut [Submission]) {
    submissions.sort_by(|a, b| {
        b.report
            .overall
            .cmp(&a.report.overall)
            .then(a.submitted_at.cmp(&b.submitted_at))
            .then_with(|| a.id.cmp(&b.id))
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardCaseView {
    pub id: String,
    pub iteration: u32,
    pub status: CaseStatus,
    pub subject: Subject,
    pub format: Format,
    pub stem: String,
    pub options: Vec<QuestionOption>,
    pub attempts: u32,
    pub sample_rejected_cot: Option<String>,
    pub sample_rejected_answer: Option<String>,
    pub enqueued_at: DateTime<Utc>,
    pub annotated_at: Option<DateTime<Utc>>,
}

impl From<&HardCase> for HardCaseView {
    fn from(c: &HardCase) -> Self {
        HardCaseView {
            id: c.question.id.clone(),
            iteration: c.iteration,
            status: c.status,
            subject: c.question.subject,
            format: c.question.format,
            stem: c.question.stem.clone(),
            options: c.question.options.clone(),
            attempts: c.failed.attempts,
            sample_rejected_cot: c.failed.sample_rejected_cot.clone(),
            sample_rejected_answer: c.failed.sample_rejected_answer.clone(),
            enqueued_at: c.enqueued_at,
            annotated_at: c.annotated_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub total: usize,
    pub page: usize,
    pub per_page: usize,
    pub items: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationVerdict {
    pub id: String,
    pub status: String,
    pub iteration: u32,
    pub annotator: String,
    pub cot_chars: usize,
}

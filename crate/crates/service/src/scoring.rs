//! Server-side scoring of a submitted answer map.

use std::collections::BTreeMap;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use cotloop_core::engine::verify;
use cotloop_core::eval::{score, EvalError, ExamRun, Grouping, Mode, Outcome, Score, SubsetScore, TranscriptEntry};
use cotloop_core::model::QaDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionReport {
    pub overall: Score,
    /// Unweighted mean over sittings.
    pub overall_simple: Score,
    pub total: u64,
    pub correct: u64,
    pub incorrect: u64,
    pub unanswered: u64,
    /// Empty when some item has no year and is not hand-crafted.
    pub by_sitting: Vec<SubsetScore>,
    /// Empty when some item has no unit.
    pub by_unit: Vec<SubsetScore>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerError {
    UnknownQuestion(String),
    Malformed { question_id: String, answer: String },
}

/// Normalizes every answer and scores the map against the version's
/// keys. Questions without an answer count as unanswered.
pub fn score_answers(
    dataset: &QaDataset,
    model: &str,
    raw: &BTreeMap<String, String>,
) -> Result<(BTreeMap<String, String>, SubmissionReport), AnswerError> {
    let index = dataset.index();
    let mut normalized = BTreeMap::new();
    for (id, answer) in raw {
        let q = index.get(id.as_str()).ok_or_else(|| AnswerError::UnknownQuestion(id.clone()))?;
        let a = q
            .normalize(answer)
            .map_err(|_| AnswerError::Malformed { question_id: id.clone(), answer: answer.clone() })?;
        normalized.insert(id.clone(), a.as_str().to_string());
    }
    let entries = dataset
        .items
        .iter()
        .map(|q| {
            let (extracted, outcome) = match normalized.get(&q.id) {
                None => (None, Outcome::Unanswered),
                Some(a) => {
                    let given = q.normalize(a).expect("normalized above");
                    let o = if verify(&given, &q.answer_key) { Outcome::Correct } else { Outcome::Incorrect };
                    (Some(a.clone()), o)
                }
            };
            TranscriptEntry { question_id: q.id.clone(), prompt: String::new(), response: String::new(), extracted, outcome }
        })
        .collect();
    let run = ExamRun {
        model: model.to_string(),
        dataset_version: dataset.version.clone(),
        mode: Mode::Deterministic,
        entries,
        started_at: Utc::now(),
        elapsed_ms: 0,
    };
    let all = score(&run, dataset, Grouping::All).expect("a released version is never empty");
    let grouped = |g: Grouping| match score(&run, dataset, g) {
        Ok(r) => Some(r),
        Err(EvalError::MissingGroupKey { .. }) => None,
        Err(e) => panic!("scoring a validated run: {e}"),
    };
    let by_sitting = grouped(Grouping::Sitting);
    let by_unit = grouped(Grouping::Unit);
    let report = SubmissionReport {
        overall: all.overall_weighted,
        overall_simple: by_sitting.as_ref().map_or(all.overall_simple, |r| r.overall_simple),
        total: all.total,
        correct: all.correct,
        incorrect: all.incorrect,
        unanswered: all.unanswered,
        by_sitting: by_sitting.map(|r| r.subsets).unwrap_or_default(),
        by_unit: by_unit.map(|r| r.subsets).unwrap_or_default(),
    };
    Ok((normalized, report))
}

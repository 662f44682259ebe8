//! Inputs shared by the benchmarks.

use cotloop_core::eval::{ExamRun, Mode, Outcome, TranscriptEntry};
use cotloop_core::model::{QaDataset, Question};
use cotloop_core::synthetic;

/// A corpus where every fourth stem is a light edit of an earlier one.
pub fn near_duplicates(n: usize, seed: u64) -> Vec<Question> {
    let mut items = synthetic::corpus(n, seed);
    for i in (3..n).step_by(4) {
        let src = items[i - 3].clone();
        let stem = format!("{} (revised)", src.stem);
        items[i] = Question::new(stem, src.options, src.answer_key.as_str(), src.format, src.subject, src.origin, Default::default())
            .expect("edited copy stays valid");
    }
    items
}

pub fn exam(n: usize) -> QaDataset {
    QaDataset::new("bench", synthetic::exam(n, 3)).expect("synthetic exam")
}

/// A run answering two of every three questions correctly.
pub fn run_for(ds: &QaDataset) -> ExamRun {
    let entries = ds
        .items
        .iter()
        .enumerate()
        .map(|(i, q)| TranscriptEntry {
            question_id: q.id.clone(),
            prompt: String::new(),
            response: String::new(),
            extracted: None,
            outcome: if i % 3 == 0 { Outcome::Incorrect } else { Outcome::Correct },
        })
        .collect();
    ExamRun {
        model: "bench".into(),
        dataset_version: ds.version.clone(),
        mode: Mode::Deterministic,
        entries,
        started_at: chrono::DateTime::UNIX_EPOCH,
        elapsed_ms: 0,
    }
}

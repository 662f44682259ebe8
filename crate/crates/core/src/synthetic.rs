//! Deterministic synthetic question corpora for fixtures, demos and
//! benchmarks. Content is meaningless but structurally valid.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Format, Origin, Question, QuestionMeta, QuestionOption, Subject};

const HERBS: &[&str] = &[
    "麻黄", "桂枝", "白芍", "甘草", "生姜", "大枣", "柴胡", "黄芩", "半夏", "人参", "当归", "川芎",
    "熟地黄", "茯苓", "白术", "陈皮", "黄芪", "附子", "干姜", "细辛", "石膏", "知母", "黄连", "大黄",
];

const TOPICS: &[&str] = &[
    "sovereign herb", "primary pattern", "treatment principle", "contraindication", "key symptom",
    "pulse finding", "tongue sign", "acupoint", "channel", "dosage form",
];

/// Sittings used for synthetic exam metadata.
pub const YEARS: [u16; 10] = [2003, 2004, 2007, 2008, 2009, 2012, 2013, 2016, 2022, 2024];

/// `n` distinct single-answer MCQ items with five options.
pub fn corpus(n: usize, seed: u64) -> Vec<Question> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| item(&mut rng, seed, i, None)).collect()
}

/// Like [`corpus`] but every item carries a year (or hand-crafted origin)
/// and a unit, spread evenly.
pub fn exam(n: usize, seed: u64) -> Vec<Question> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let unit = (i % 4) as u8 + 1;
            let slot = (i / 4) % (YEARS.len() + 1);
            item(&mut rng, seed, i, Some((YEARS.get(slot).copied(), unit)))
        })
        .collect()
}

fn item(rng: &mut ChaCha8Rng, seed: u64, i: usize, exam: Option<(Option<u16>, u8)>) -> Question {
    let topic = TOPICS.choose(rng).expect("non-empty");
    let herb = HERBS.choose(rng).expect("non-empty");
    let stem = format!("[{seed}:{i}] Regarding {herb}, which option names the {topic}?");
    let mut picks: Vec<&str> = HERBS.choose_multiple(rng, 5).copied().collect();
    picks.sort_unstable();
    let options: Vec<QuestionOption> = picks
        .iter()
        .enumerate()
        .map(|(j, h)| QuestionOption { label: (b'A' + j as u8) as char, text: format!("{h} ({topic})") })
        .collect();
    let key = ((b'A' + rng.random_range(0..5u8)) as char).to_string();
    let subject = Subject::ALL[i % Subject::ALL.len()];
    let (origin, meta) = match exam {
        Some((Some(year), unit)) => (Origin::RealExam, QuestionMeta { year: Some(year), unit: Some(unit) }),
        Some((None, unit)) => (Origin::HandCrafted, QuestionMeta { year: None, unit: Some(unit) }),
        None => (Origin::MockExam, QuestionMeta::default()),
    };
    Question::new(stem, options, &key, Format::McqSingle, subject, origin, meta).expect("synthetic item is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = corpus(50, 1);
        let b = corpus(50, 1);
        assert_eq!(a, b);
        let ids: std::collections::HashSet<_> = a.iter().map(|q| &q.id).collect();
        assert_eq!(ids.len(), 50);
        assert_ne!(corpus(5, 2)[0].id, a[0].id);
    }

    #[test]
    fn exam_items_have_metadata() {
        for q in exam(88, 4) {
            assert!(q.unit.is_some());
            assert_eq!(q.year.is_none(), q.origin == Origin::HandCrafted);
        }
    }
}

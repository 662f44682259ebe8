use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::run::{ExamRun, Outcome};
use super::EvalError;
use crate::model::{Origin, QaDataset, Question};

/// A percentage with two decimals, stored exactly as hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Score(i64);

impl Score {
    pub const ZERO: Score = Score(0);

    pub fn from_hundredths(h: i64) -> Score {
        Score(h)
    }

    pub fn hundredths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Parses "93.3" or "93.30"; anything past two decimals is rejected.
    pub fn parse(s: &str) -> Option<Score> {
        let s = s.trim();
        let (neg, s) = s.strip_prefix('-').map_or((false, s), |r| (true, r));
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() || frac.len() > 2 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        let mut h: i64 = int.parse::<i64>().ok()?.checked_mul(100)?;
        if !frac.is_empty() {
            let f: i64 = frac.parse().ok()?;
            h += if frac.len() == 1 { f * 10 } else { f };
        }
        Some(Score(if neg { -h } else { h }))
    }

    /// 100 times a ratio, rounded half to even at two decimals.
    pub fn percent(ratio: &BigRational) -> Score {
        let scaled = ratio * BigRational::from_integer(BigInt::from(10_000));
        Score(round_half_even(&scaled).to_i64().expect("score fits in i64"))
    }

    pub fn of(correct: u64, total: u64) -> Score {
        assert!(total > 0, "score of an empty group");
        Score::percent(&BigRational::new(BigInt::from(correct), BigInt::from(total)))
    }
}

pub(crate) fn round_half_even(x: &BigRational) -> BigInt {
    let (q, r) = x.numer().div_mod_floor(x.denom());
    let twice: BigInt = &r * 2;
    match twice.cmp(x.denom()) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q.is_even() {
                q
            } else {
                q + 1
            }
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let a = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", a / 100, a % 100)
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Score, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Score((v * 100.0).round() as i64))
    }
}

/// The sitting a question belongs to: an exam year or the hand-crafted set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sitting {
    Year(u16),
    HandCrafted,
}

/// Identifies one scored subset. Orders years ascending, then the
/// hand-crafted set, with units ascending inside each sitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubsetKey {
    pub sitting: Option<Sitting>,
    pub unit: Option<u8>,
}

impl SubsetKey {
    pub fn year(y: u16) -> SubsetKey {
        SubsetKey { sitting: Some(Sitting::Year(y)), unit: None }
    }

    pub fn hand_crafted() -> SubsetKey {
        SubsetKey { sitting: Some(Sitting::HandCrafted), unit: None }
    }

    pub fn unit(u: u8) -> SubsetKey {
        SubsetKey { sitting: None, unit: Some(u) }
    }

    pub fn label(&self) -> String {
        let sitting = self.sitting.map(|s| match s {
            Sitting::Year(y) => y.to_string(),
            Sitting::HandCrafted => "HC".to_string(),
        });
        let unit = self.unit.map(|u| format!("U{u}"));
        match (sitting, unit) {
            (Some(s), Some(u)) => format!("{s}/{u}"),
            (Some(s), None) => s,
            (None, Some(u)) => u,
            (None, None) => "All".to_string(),
        }
    }

    /// Inverse of `label`.
    pub fn parse(label: &str) -> Option<SubsetKey> {
        let sitting_of = |s: &str| -> Option<Sitting> {
            if s == "HC" {
                Some(Sitting::HandCrafted)
            } else {
                s.parse().ok().map(Sitting::Year)
            }
        };
        let unit_of = |s: &str| s.strip_prefix('U').and_then(|u| u.parse().ok());
        match label.split_once('/') {
            Some((s, u)) => Some(SubsetKey { sitting: Some(sitting_of(s)?), unit: Some(unit_of(u)?) }),
            None if label == "All" => Some(SubsetKey { sitting: None, unit: None }),
            None if label.starts_with('U') => Some(SubsetKey::unit(unit_of(label)?)),
            None => Some(SubsetKey { sitting: Some(sitting_of(label)?), unit: None }),
        }
    }
}

impl fmt::Display for SubsetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One column per exam year plus the hand-crafted set.
    #[default]
    Sitting,
    Unit,
    SittingUnit,
    /// A single group holding every question.
    All,
}

fn sitting_of(q: &Question) -> Option<Sitting> {
    match (q.year, q.origin) {
        (Some(y), _) => Some(Sitting::Year(y)),
        (None, Origin::HandCrafted) => Some(Sitting::HandCrafted),
        _ => None,
    }
}

pub fn subset_key(q: &Question, grouping: Grouping) -> Result<SubsetKey, EvalError> {
    let missing = |what: &str| EvalError::MissingGroupKey { question_id: q.id.clone(), key: what.to_string() };
    Ok(match grouping {
        Grouping::All => SubsetKey { sitting: None, unit: None },
        Grouping::Sitting => SubsetKey { sitting: Some(sitting_of(q).ok_or_else(|| missing("year"))?), unit: None },
        Grouping::Unit => SubsetKey::unit(q.unit.ok_or_else(|| missing("unit"))?),
        Grouping::SittingUnit => SubsetKey {
            sitting: Some(sitting_of(q).ok_or_else(|| missing("year"))?),
            unit: Some(q.unit.ok_or_else(|| missing("unit"))?),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub key: SubsetKey,
    pub label: String,
    pub total: u64,
    pub correct: u64,
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamReport {
    pub model: String,
    pub dataset_version: String,
    pub grouping: Grouping,
    /// Ordered by key.
    pub subsets: Vec<SubsetScore>,
    /// Question-weighted mean; the headline "Overall".
    pub overall_weighted: Score,
    /// Unweighted mean of subset scores.
    pub overall_simple: Score,
    pub total: u64,
    pub correct: u64,
    pub incorrect: u64,
    pub unanswered: u64,
}

impl ExamReport {
    pub fn subset(&self, key: &SubsetKey) -> Option<&SubsetScore> {
        self.subsets.iter().find(|s| &s.key == key)
    }

    /// Builds a report directly from per-subset tallies.
    pub fn from_counts(
        model: &str,
        dataset_version: &str,
        grouping: Grouping,
        counts: impl IntoIterator<Item = (SubsetKey, u64, u64)>,
    ) -> Result<ExamReport, EvalError> {
        let mut groups: BTreeMap<SubsetKey, (u64, u64)> = BTreeMap::new();
        for (key, correct, total) in counts {
            let g = groups.entry(key).or_default();
            g.0 += correct;
            g.1 += total;
        }
        if groups.is_empty() {
            return Err(EvalError::EmptyGroup("no questions to score".into()));
        }
        let mut subsets = Vec::new();
        let (mut c_sum, mut n_sum) = (0u64, 0u64);
        let mut ratio_sum = BigRational::zero();
        for (key, (correct, total)) in groups {
            if total == 0 || correct > total {
                return Err(EvalError::EmptyGroup(key.label()));
            }
            c_sum += correct;
            n_sum += total;
            ratio_sum += BigRational::new(BigInt::from(correct), BigInt::from(total));
            subsets.push(SubsetScore { key, label: key.label(), total, correct, score: Score::of(correct, total) });
        }
        let overall_simple = Score::percent(&(ratio_sum / BigRational::from_integer(BigInt::from(subsets.len()))));
        Ok(ExamReport {
            model: model.to_string(),
            dataset_version: dataset_version.to_string(),
            grouping,
            overall_weighted: Score::of(c_sum, n_sum),
            overall_simple,
            subsets,
            total: n_sum,
            correct: c_sum,
            incorrect: n_sum - c_sum,
            unanswered: 0,
        })
    }
}

/// Scores a run, counting unanswered questions as wrong.
pub fn score(run: &ExamRun, dataset: &QaDataset, grouping: Grouping) -> Result<ExamReport, EvalError> {
    let index = dataset.index();
    let mut counts: HashMap<SubsetKey, (u64, u64)> = HashMap::new();
    let mut unanswered = 0;
    for entry in &run.entries {
        let q = index.get(entry.question_id.as_str()).ok_or_else(|| EvalError::UnknownQuestion(entry.question_id.clone()))?;
        let c = counts.entry(subset_key(q, grouping)?).or_default();
        c.1 += 1;
        match entry.outcome {
            Outcome::Correct => c.0 += 1,
            Outcome::Incorrect => {}
            Outcome::Unanswered => unanswered += 1,
        }
    }
    let mut report = ExamReport::from_counts(&run.model, &run.dataset_version, grouping, counts.into_iter().map(|(k, (c, n))| (k, c, n)))?;
    report.unanswered = unanswered;
    report.incorrect -= unanswered;
    Ok(report)
}

/// Weighted score over `old` minus weighted score over `new`. Positive
/// means the model does better on material it may have seen.
pub fn leakage_gap(report: &ExamReport, old: &[SubsetKey], new: &[SubsetKey]) -> Result<Score, EvalError> {
    if old.is_empty() || new.is_empty() {
        return Err(EvalError::EmptyKeySet);
    }
    let old_set: HashSet<_> = old.iter().collect();
    if new.iter().any(|k| old_set.contains(k)) {
        return Err(EvalError::OverlappingKeys);
    }
    let side = |keys: &[SubsetKey]| -> Result<BigRational, EvalError> {
        let (mut c, mut n) = (0u64, 0u64);
        for k in keys.iter().collect::<HashSet<_>>() {
            let s = report.subset(k).ok_or_else(|| EvalError::UnknownKey(k.label()))?;
            c += s.correct;
            n += s.total;
        }
        Ok(BigRational::new(BigInt::from(c), BigInt::from(n)))
    };
    Ok(Score::percent(&(side(old)? - side(new)?)))
}

/// Keys of every year sitting in a report, and of the hand-crafted set.
pub fn sitting_keys(report: &ExamReport) -> (Vec<SubsetKey>, Vec<SubsetKey>) {
    report
        .subsets
        .iter()
        .map(|s| s.key)
        .partition(|k| !matches!(k.sitting, Some(Sitting::HandCrafted)))
}

/// Difference of two already-rounded scores.
pub fn score_gap(a: Score, b: Score) -> Score {
    Score(a.0 - b.0)
}

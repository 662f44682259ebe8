use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::model::{normalize_answer, normalize_text, Format, Origin, Question, QuestionError, QuestionMeta, QuestionOption, Subject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    MockExam,
    RealExam,
    TextbookQa,
}

impl SourceKind {
    pub fn origin(self) -> Origin {
        match self {
            SourceKind::MockExam => Origin::MockExam,
            SourceKind::RealExam => Origin::RealExam,
            SourceKind::TextbookQa => Origin::TextbookQa,
        }
    }
}

/// An option as harvested: either `{label, text}` or a bare string whose
/// label is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawOption {
    Labeled { label: String, text: String },
    Plain(String),
}

/// Unvalidated harvested item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawItem {
    pub stem: String,
    #[serde(default)]
    pub options: Vec<RawOption>,
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub source_uri: String,
    #[serde(default)]
    pub source_kind: SourceKind,
    #[serde(default)]
    pub subject: Option<Subject>,
    #[serde(default)]
    pub year: Option<u16>,
    #[serde(default)]
    pub unit: Option<u8>,
    /// Inferred from the options and answer when absent.
    #[serde(default)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    EmptyStem,
    MissingAnswer,
    AnswerNotInOptions,
    TooFewOptions,
    DuplicateLabels,
    /// Labels that are not single letters running A, B, C, ...
    NonConsecutiveLabels,
    MultipleAnswers,
    FormatNotAllowed,
    UnexpectedOptions,
    BadMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub min_options: usize,
    pub allowed_formats: Vec<Format>,
    pub default_subject: Subject,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_options: 4,
            allowed_formats: vec![Format::McqSingle, Format::McqMulti, Format::FillInBlank],
            default_subject: Subject::Other,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub accepted: Vec<Question>,
    pub rejected: Vec<(RawItem, RejectReason)>,
}

/// Splits raw items into valid questions and rejects with a reason each.
pub fn filter_malformed(items: Vec<RawItem>, policy: &FilterPolicy) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for item in items {
        match validate(&item, policy) {
            Ok(q) => out.accepted.push(q),
            Err(reason) => out.rejected.push((item, reason)),
        }
    }
    out
}

fn validate(item: &RawItem, policy: &FilterPolicy) -> Result<Question, RejectReason> {
    if normalize_text(&item.stem).is_empty() {
        return Err(RejectReason::EmptyStem);
    }
    if normalize_text(&item.answer).is_empty() {
        return Err(RejectReason::MissingAnswer);
    }
    let format = item.format.unwrap_or_else(|| infer_format(item));
    if !policy.allowed_formats.contains(&format) {
        return Err(RejectReason::FormatNotAllowed);
    }
    let options = if format.is_mcq() {
        let options = relabel(&item.options)?;
        if options.len() < policy.min_options.max(2) {
            return Err(RejectReason::TooFewOptions);
        }
        let letters = normalize_answer(&item.answer).map_err(|_| RejectReason::MissingAnswer)?;
        if letters.letters().any(|l| !options.iter().any(|o| o.label == l)) {
            return Err(RejectReason::AnswerNotInOptions);
        }
        options
    } else if item.options.is_empty() {
        Vec::new()
    } else {
        return Err(RejectReason::UnexpectedOptions);
    };
    let meta = QuestionMeta { year: item.year, unit: item.unit };
    let subject = item.subject.unwrap_or(policy.default_subject);
    Question::new(item.stem.clone(), options, &item.answer, format, subject, item.source_kind.origin(), meta).map_err(
        |e| match e {
            QuestionError::EmptyStem => RejectReason::EmptyStem,
            QuestionError::TooFewOptions(_) => RejectReason::TooFewOptions,
            QuestionError::BadLabels(_) => RejectReason::NonConsecutiveLabels,
            QuestionError::AnswerNotInOptions(_) => RejectReason::AnswerNotInOptions,
            QuestionError::MultipleAnswers(_) => RejectReason::MultipleAnswers,
            QuestionError::EmptyAnswer => RejectReason::MissingAnswer,
            QuestionError::UnexpectedOptions => RejectReason::UnexpectedOptions,
            QuestionError::BadUnit(_) | QuestionError::IdMismatch { .. } => RejectReason::BadMetadata,
        },
    )
}

fn infer_format(item: &RawItem) -> Format {
    if item.options.is_empty() {
        Format::FillInBlank
    } else if normalize_answer(&item.answer).is_ok_and(|a| a.as_str().len() > 1) {
        Format::McqMulti
    } else {
        Format::McqSingle
    }
}

/// Canonicalizes harvested labels ("a.", "Ｂ、", "(C)") to single capitals and
/// checks they run A, B, C, ... without gaps.
fn relabel(raw: &[RawOption]) -> Result<Vec<QuestionOption>, RejectReason> {
    let mut seen = BTreeSet::new();
    let mut options = Vec::with_capacity(raw.len());
    for (i, opt) in raw.iter().enumerate() {
        let (label, text) = match opt {
            RawOption::Labeled { label, text } => {
                let folded: String = label.nfkc().filter(|c| !" .．、:：)）(（".contains(*c)).collect();
                let mut chars = folded.chars();
                let label = match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_alphabetic() => c.to_ascii_uppercase(),
                    _ => return Err(RejectReason::NonConsecutiveLabels),
                };
                (label, text.clone())
            }
            RawOption::Plain(text) => {
                let Some(label) = u8::try_from(i).ok().filter(|i| *i < 26).map(|i| (b'A' + i) as char) else {
                    return Err(RejectReason::NonConsecutiveLabels);
                };
                (label, text.clone())
            }
        };
        if !seen.insert(label) {
            return Err(RejectReason::DuplicateLabels);
        }
        options.push(QuestionOption { label, text });
    }
    options.sort_by_key(|o| o.label);
    if options.iter().enumerate().any(|(i, o)| o.label != (b'A' + i as u8) as char) {
        return Err(RejectReason::NonConsecutiveLabels);
    }
    Ok(options)
}

//! Canonical data types shared by the whole pipeline: questions, datasets,
//! candidate traces and accepted chain-of-thought records.
//!
//! Everything here is an immutable value once constructed. Questions are
//! validated on construction and on deserialization, so any `Question` in
//! memory satisfies its invariants.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::io::{self, IoError};

/// Knowledge domains of the training corpus, plus a catch-all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    InternalMedicine,
    Surgery,
    InfectiousDiseases,
    Pediatrics,
    MateriaMedica,
    HealthLaw,
    Diagnostics,
    BasicTheory,
    Acupuncture,
    HerbalFormulas,
    Ethics,
    Gynecology,
    WarmFebrileDiseases,
    ShangHanLun,
    JinGuiYaoLue,
    HuangdiNeijing,
    Other,
}

impl Subject {
    pub const ALL: [Subject; 17] = [
        Subject::InternalMedicine,
        Subject::Surgery,
        Subject::InfectiousDiseases,
        Subject::Pediatrics,
        Subject::MateriaMedica,
        Subject::HealthLaw,
        Subject::Diagnostics,
        Subject::BasicTheory,
        Subject::Acupuncture,
        Subject::HerbalFormulas,
        Subject::Ethics,
        Subject::Gynecology,
        Subject::WarmFebrileDiseases,
        Subject::ShangHanLun,
        Subject::JinGuiYaoLue,
        Subject::HuangdiNeijing,
        Subject::Other,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    RealExam,
    MockExam,
    TextbookQa,
    HandCrafted,
}

impl Origin {
    /// Survivor preference during deduplication; lower wins.
    pub fn dedup_priority(self) -> u8 {
        match self {
            Origin::RealExam => 0,
            Origin::HandCrafted => 1,
            Origin::MockExam => 2,
            Origin::TextbookQa => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    McqSingle,
    McqMulti,
    FillInBlank,
}

impl Format {
    pub fn is_mcq(self) -> bool {
        !matches!(self, Format::FillInBlank)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Format::McqSingle => "mcq_single",
            Format::McqMulti => "mcq_multi",
            Format::FillInBlank => "fill_in_blank",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A normalized answer. For multiple-choice items this is the sorted,
/// deduplicated concatenation of option letters ("AC"); for fill-in-the-blank
/// items it is the normalized gold completion.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Answer(String);

impl Answer {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Letters of a multiple-choice answer.
    pub fn letters(&self) -> impl Iterator<Item = char> + '_ {
        self.0.chars()
    }

    /// Builds a fill-in-the-blank answer from free text.
    pub fn text(raw: &str) -> Answer {
        Answer(normalize_text(raw))
    }

    pub(crate) fn from_normalized(s: String) -> Answer {
        Answer(s)
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("no option letter found in {0:?}")]
    NoLetterFound(String),
}

/// Normalizes a raw answer string into its canonical letter set.
///
/// Width variants are folded first (so full-width `Ｂ` counts as `B`), then every
/// Latin letter is uppercased and collected; everything else is ignored.
pub fn normalize_answer(raw: &str) -> Result<Answer, AnswerError> {
    let letters: BTreeSet<char> = raw
        .nfkc()
        .filter(char::is_ascii_alphabetic)
        .map(|c| c.to_ascii_uppercase())
        .collect();
    if letters.is_empty() {
        return Err(AnswerError::NoLetterFound(raw.to_string()));
    }
    Ok(Answer(letters.into_iter().collect()))
}

/// NFC plus whitespace collapse and trim. Used for stems, option texts and
/// fill-in-the-blank answers before hashing or exact comparison.
pub fn normalize_text(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOption {
    #[serde(with = "label_serde")]
    pub label: char,
    pub text: String,
}

mod label_serde {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(label: &char, s: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        s.serialize_str(label.encode_utf8(&mut buf))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<char, D::Error> {
        let s = String::deserialize(d)?;
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(D::Error::custom(format!("option label must be one letter, got {s:?}"))),
        }
    }
}

/// Stable content identifier of a question.
///
/// The digest covers the normalized stem, each option (label and normalized
/// text) and the answer key, with unit separators between fields so that
/// shifting text across field boundaries changes the id.
pub fn question_id(stem: &str, options: &[QuestionOption], answer_key: &Answer) -> String {
    let mut hasher = Sha256::new();
    hasher.update(normalize_text(stem).as_bytes());
    for opt in options {
        hasher.update([0x1e]);
        hasher.update(opt.label.to_string().as_bytes());
        hasher.update([0x1f]);
        hasher.update(normalize_text(&opt.text).as_bytes());
    }
    hasher.update([0x1d]);
    hasher.update(answer_key.as_str().as_bytes());
    let digest = hasher.finalize();
    format!("q{}", hex::encode(&digest[..16]))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestionError {
    #[error("stem is empty")]
    EmptyStem,
    #[error("multiple-choice question needs at least 2 options, has {0}")]
    TooFewOptions(usize),
    #[error("option labels must be consecutive letters from A, found {0:?}")]
    BadLabels(String),
    #[error("answer letter {0} is not among the options")]
    AnswerNotInOptions(char),
    #[error("single-answer question has answer key {0:?}")]
    MultipleAnswers(String),
    #[error("answer key is empty")]
    EmptyAnswer,
    #[error("fill-in-the-blank question must not carry options")]
    UnexpectedOptions,
    #[error("unit must be in 1..=4, got {0}")]
    BadUnit(u8),
    #[error("stored id {stored} does not match content id {computed}")]
    IdMismatch { stored: String, computed: String },
}

/// Optional descriptive metadata attached to a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QuestionMeta {
    pub year: Option<u16>,
    pub unit: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QuestionRepr")]
pub struct Question {
    pub id: String,
    pub stem: String,
    pub options: Vec<QuestionOption>,
    pub answer_key: Answer,
    pub subject: Subject,
    pub origin: Origin,
    pub year: Option<u16>,
    pub unit: Option<u8>,
    pub format: Format,
}

#[derive(Deserialize)]
struct QuestionRepr {
    id: String,
    stem: String,
    #[serde(default)]
    options: Vec<QuestionOption>,
    answer_key: String,
    subject: Subject,
    origin: Origin,
    #[serde(default)]
    year: Option<u16>,
    #[serde(default)]
    unit: Option<u8>,
    format: Format,
}

impl TryFrom<QuestionRepr> for Question {
    type Error = QuestionError;

    fn try_from(r: QuestionRepr) -> Result<Self, Self::Error> {
        let q = Question::new(
            r.stem,
            r.options,
            &r.answer_key,
            r.format,
            r.subject,
            r.origin,
            QuestionMeta { year: r.year, unit: r.unit },
        )?;
        if q.id != r.id {
            return Err(QuestionError::IdMismatch { stored: r.id, computed: q.id });
        }
        Ok(q)
    }
}

impl Question {
    /// Validates and builds a question. The raw answer is normalized
    /// according to `format`; the id is derived from content.
    pub fn new(
        stem: String,
        options: Vec<QuestionOption>,
        raw_answer: &str,
        format: Format,
        subject: Subject,
        origin: Origin,
        meta: QuestionMeta,
    ) -> Result<Question, QuestionError> {
        if normalize_text(&stem).is_empty() {
            return Err(QuestionError::EmptyStem);
        }
        if let Some(unit) = meta.unit {
            if !(1..=4).contains(&unit) {
                return Err(QuestionError::BadUnit(unit));
            }
        }
        let answer_key = if format.is_mcq() {
            if options.len() < 2 {
                return Err(QuestionError::TooFewOptions(options.len()));
            }
            let consecutive = options
                .iter()
                .enumerate()
                .all(|(i, o)| o.label == (b'A' + i as u8) as char);
            if !consecutive || options.len() > 26 {
                let labels: String = options.iter().map(|o| o.label).collect();
                return Err(QuestionError::BadLabels(labels));
            }
            let key = normalize_answer(raw_answer).map_err(|_| QuestionError::EmptyAnswer)?;
            if let Some(bad) = key.letters().find(|l| !options.iter().any(|o| o.label == *l)) {
                return Err(QuestionError::AnswerNotInOptions(bad));
            }
            if format == Format::McqSingle && key.as_str().len() != 1 {
                return Err(QuestionError::MultipleAnswers(key.0));
            }
            key
        } else {
            if !options.is_empty() {
                return Err(QuestionError::UnexpectedOptions);
            }
            let key = Answer::text(raw_answer);
            if key.as_str().is_empty() {
                return Err(QuestionError::EmptyAnswer);
            }
            key
        };
        let id = question_id(&stem, &options, &answer_key);
        Ok(Question {
            id,
            stem,
            options,
            answer_key,
            subject,
            origin,
            year: meta.year,
            unit: meta.unit,
            format,
        })
    }

    pub fn labels(&self) -> impl Iterator<Item = char> + '_ {
        self.options.iter().map(|o| o.label)
    }

    /// Stem followed by one `X. text` line per option.
    pub fn render(&self) -> String {
        let mut out = self.stem.trim().to_string();
        for opt in &self.options {
            out.push('\n');
            out.push(opt.label);
            out.push_str(". ");
            out.push_str(opt.text.trim());
        }
        out
    }

    /// Normalizes a free-form answer the way this question's key was normalized.
    pub fn normalize(&self, raw: &str) -> Result<Answer, AnswerError> {
        if self.format.is_mcq() {
            normalize_answer(raw)
        } else {
            Ok(Answer::text(raw))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("duplicate question id {0}")]
    DuplicateId(String),
    #[error("manifest hash mismatch: manifest says {expected}, content hashes to {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("manifest count {expected} does not match {actual} items")]
    CountMismatch { expected: usize, actual: usize },
}

/// A versioned, content-addressed question set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaDataset {
    pub version: String,
    pub items: Vec<Question>,
    pub manifest_hash: String,
}

/// Sidecar describing a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub manifest_hash: String,
    pub count: usize,
}

impl QaDataset {
    pub fn new(version: impl Into<String>, items: Vec<Question>) -> Result<QaDataset, DatasetError> {
        let mut seen = HashSet::with_capacity(items.len());
        for q in &items {
            if !seen.insert(q.id.as_str()) {
                return Err(DatasetError::DuplicateId(q.id.clone()));
            }
        }
        let manifest_hash = content_hash(&items);
        Ok(QaDataset { version: version.into(), items, manifest_hash })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Question> {
        self.items.iter().find(|q| q.id == id)
    }

    pub fn index(&self) -> std::collections::HashMap<&str, &Question> {
        self.items.iter().map(|q| (q.id.as_str(), q)).collect()
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            version: self.version.clone(),
            manifest_hash: self.manifest_hash.clone(),
            count: self.items.len(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<(), IoError> {
        io::write_jsonl(out, &self.items)
    }

    /// Writes `<path>` (JSONL) and `<path>.manifest.json`.
    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        io::write_jsonl_file(path, &self.items)?;
        io::write_json_file(&manifest_path(path), &self.manifest())
    }

    /// Loads a dataset file, verifying it against its manifest when present.
    pub fn load(path: &Path) -> Result<QaDataset, IoError> {
        let stored: Vec<QuestionRepr> = io::read_jsonl_file(path)?;
        let items = stored
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                Question::try_from(r).map_err(|e| match e {
                    QuestionError::IdMismatch { .. } => IoError::integrity(path, format_args!("line {}: {e}", i + 1)),
                    e => IoError::invalid(path, format_args!("line {}: {e}", i + 1)),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mpath = manifest_path(path);
        let (version, expected) = if mpath.exists() {
            let m: DatasetManifest = io::read_json_file(&mpath)?;
            if m.count != items.len() {
                return Err(IoError::integrity(
                    path,
                    DatasetError::CountMismatch { expected: m.count, actual: items.len() },
                ));
            }
            (m.version, Some(m.manifest_hash))
        } else {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("unversioned");
            (stem.to_string(), None)
        };
        let ds = QaDataset::new(version, items).map_err(|e| IoError::invalid(path, e))?;
        if let Some(expected) = expected {
            if expected != ds.manifest_hash {
                return Err(IoError::integrity(
                    path,
                    DatasetError::HashMismatch { expected, actual: ds.manifest_hash },
                ));
            }
        }
        Ok(ds)
    }

    pub fn read_jsonl<R: BufRead>(version: &str, input: R) -> Result<QaDataset, IoError> {
        let items = io::read_jsonl(input, Path::new("<stream>"))?;
        QaDataset::new(version, items).map_err(|e| IoError::invalid(Path::new("<stream>"), e))
    }
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

/// Hash over the canonical serialization of `items` sorted by id.
pub fn content_hash(items: &[Question]) -> String {
    let mut sorted: Vec<&Question> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut hasher = Sha256::new();
    for q in sorted {
        hasher.update(serde_json::to_vec(q).expect("question serializes"));
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Decoding parameters recorded with each generated trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub seed: u64,
}

/// Result of pulling an answer out of a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Extracted {
    Answer(Answer),
    ExtractionFailed,
}

impl Extracted {
    pub fn answer(&self) -> Option<&Answer> {
        match self {
            Extracted::Answer(a) => Some(a),
            Extracted::ExtractionFailed => None,
        }
    }
}

/// One generated (chain of thought, answer) candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub question_id: String,
    pub attempt_index: u32,
    pub chain_of_thought: String,
    pub raw_response: String,
    pub extracted_answer: Extracted,
    pub verified: bool,
    pub backend_model: String,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    Machine,
    Expert,
}

/// An accepted chain-of-thought sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRecord {
    pub question_id: String,
    pub chain_of_thought: String,
    pub final_answer: Answer,
    pub source: RecordSource,
    pub iteration: u32,
    pub created_by: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn opts(texts: &[&str]) -> Vec<QuestionOption> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| QuestionOption { label: (b'A' + i as u8) as char, text: t.to_string() })
            .collect()
    }

    fn mcq(stem: &str, answer: &str) -> Result<Question, QuestionError> {
        Question::new(
            stem.into(),
            opts(&["one", "two", "three", "four"]),
            answer,
            Format::McqSingle,
            Subject::Other,
            Origin::MockExam,
            QuestionMeta::default(),
        )
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("b").unwrap().as_str(), "B");
        assert_eq!(normalize_answer(" C, A").unwrap().as_str(), "AC");
        assert_eq!(normalize_answer("ＢＡ").unwrap().as_str(), "AB");
        assert!(matches!(normalize_answer("——"), Err(AnswerError::NoLetterFound(_))));
        assert!(normalize_answer("").is_err());
    }

    #[test]
    fn id_is_whitespace_insensitive() {
        let a = mcq("Which herb?", "B").unwrap();
        let b = mcq("Which   herb?  \n", "B").unwrap();
        assert_eq!(a.id, b.id);
        let c = mcq("Which herb?", "C").unwrap();
        assert_ne!(a.id, c.id);
    }

    #[test]
    fn id_changes_with_option_text() {
        let a = mcq("stem", "A").unwrap();
        let mut options = opts(&["one", "two", "three", "four"]);
        options[2].text = "three!".into();
        let b = question_id("stem", &options, &a.answer_key);
        assert_ne!(a.id, b);
    }

    #[test]
    fn question_invariants() {
        assert_eq!(mcq("  ", "A"), Err(QuestionError::EmptyStem));
        assert_eq!(mcq("s", "E"), Err(QuestionError::AnswerNotInOptions('E')));
        assert!(matches!(mcq("s", "AB"), Err(QuestionError::MultipleAnswers(_))));
        let mut skipped = opts(&["x", "y", "z"]);
        skipped[2].label = 'D';
        let err = Question::new(
            "s".into(),
            skipped,
            "A",
            Format::McqSingle,
            Subject::Other,
            Origin::MockExam,
            QuestionMeta::default(),
        );
        assert!(matches!(err, Err(QuestionError::BadLabels(_))));
        let multi = Question::new(
            "s".into(),
            opts(&["x", "y", "z"]),
            "c,a",
            Format::McqMulti,
            Subject::Other,
            Origin::MockExam,
            QuestionMeta::default(),
        )
        .unwrap();
        assert_eq!(multi.answer_key.as_str(), "AC");
    }

    #[test]
    fn fill_in_blank_keeps_text() {
        let q = Question::new(
            "The sovereign herb of 麻黄汤 is ____".into(),
            vec![],
            "  麻黄 ",
            Format::FillInBlank,
            Subject::HerbalFormulas,
            Origin::TextbookQa,
            QuestionMeta::default(),
        )
        .unwrap();
        assert_eq!(q.answer_key.as_str(), "麻黄");
    }

    #[test]
    fn deserialize_rejects_tampered_id() {
        let q = mcq("stem", "A").unwrap();
        let mut v = serde_json::to_value(&q).unwrap();
        v["id"] = "q0000".into();
        let err = serde_json::from_value::<Question>(v).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }

    #[test]
    fn dataset_rejects_duplicates() {
        let q = mcq("stem", "A").unwrap();
        assert!(matches!(
            QaDataset::new("v1", vec![q.clone(), q]),
            Err(DatasetError::DuplicateId(_))
        ));
    }

    #[test]
    fn hash_ignores_item_order() {
        let a = mcq("first", "A").unwrap();
        let b = mcq("second", "B").unwrap();
        let d1 = QaDataset::new("v", vec![a.clone(), b.clone()]).unwrap();
        let d2 = QaDataset::new("v", vec![b, a]).unwrap();
        assert_eq!(d1.manifest_hash, d2.manifest_hash);
    }
}

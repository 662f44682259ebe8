//! A deterministic stand-in for a model that gets better as its training
//! set grows.
//!
//! The training-set size is read from the request's model id (`...#sft=<n>`),
//! so the same mock serves every iteration of the loop once the trainer's
//! model ids are wired in.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Backend, BackendError, ChatRequest, Completion};
use crate::model::{Format, Question};

/// Suffix carrying the training-set size in a model id.
pub const SIZE_TAG: &str = "#sft=";

/// Finds the question a prompt is about by matching stems.
#[derive(Clone, Default)]
pub struct KeyIndex {
    questions: Arc<Vec<Question>>,
    by_first_line: Arc<HashMap<String, Vec<usize>>>,
}

impl KeyIndex {
    pub fn new(questions: Vec<Question>) -> KeyIndex {
        let mut by_first_line: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, q) in questions.iter().enumerate() {
            if let Some(line) = first_line(&q.stem) {
                by_first_line.entry(line.to_string()).or_default().push(i);
            }
        }
        KeyIndex { questions: Arc::new(questions), by_first_line: Arc::new(by_first_line) }
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    /// The question whose full stem appears in `text`; longest stem wins.
    pub fn lookup(&self, text: &str) -> Option<&Question> {
        let mut best: Option<&Question> = None;
        for line in text.lines() {
            let Some(idxs) = self.by_first_line.get(line.trim()) else { continue };
            for &i in idxs {
                let q = &self.questions[i];
                if text.contains(q.stem.trim())
                    && best.is_none_or(|b| b.stem.trim().len() < q.stem.trim().len())
                {
                    best = Some(q);
                }
            }
        }
        best
    }
}

fn first_line(stem: &str) -> Option<&str> {
    stem.trim().lines().map(str::trim).find(|l| !l.is_empty())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("curve has no points")]
    Empty,
    #[error("curve value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("curve decreases between sizes {0} and {1}")]
    NonMonotone(u64, u64),
}

/// Success probability as a function of training-set size: piecewise linear
/// between the given points, constant beyond the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u64, f64>", into = "BTreeMap<u64, f64>")]
pub struct CorrectnessCurve {
    points: BTreeMap<u64, f64>,
}

impl TryFrom<BTreeMap<u64, f64>> for CorrectnessCurve {
    type Error = CurveError;

    fn try_from(points: BTreeMap<u64, f64>) -> Result<Self, Self::Error> {
        if points.is_empty() {
            return Err(CurveError::Empty);
        }
        let mut prev: Option<(u64, f64)> = None;
        for (&size, &p) in &points {
            if !(0.0..=1.0).contains(&p) {
                return Err(CurveError::OutOfRange(p));
            }
            if let Some((ps, pp)) = prev {
                if p < pp {
                    return Err(CurveError::NonMonotone(ps, size));
                }
            }
            prev = Some((size, p));
        }
        Ok(CorrectnessCurve { points })
    }
}

impl From<CorrectnessCurve> for BTreeMap<u64, f64> {
    fn from(c: CorrectnessCurve) -> Self {
        c.points
    }
}

impl CorrectnessCurve {
    pub fn new(points: impl IntoIterator<Item = (u64, f64)>) -> Result<CorrectnessCurve, CurveError> {
        CorrectnessCurve::try_from(points.into_iter().collect::<BTreeMap<_, _>>())
    }

    pub fn constant(p: f64) -> Result<CorrectnessCurve, CurveError> {
        CorrectnessCurve::new([(0, p)])
    }

    pub fn at(&self, size: u64) -> f64 {
        let below = self.points.range(..=size).next_back();
        let above = self.points.range(size..).next();
        match (below, above) {
            (Some((&s0, &p0)), Some((&s1, &p1))) if s1 > s0 => {
                p0 + (p1 - p0) * (size - s0) as f64 / (s1 - s0) as f64
            }
            (Some((_, &p)), _) | (None, Some((_, &p))) => p,
            (None, None) => unreachable!("curve is non-empty"),
        }
    }
}

/// Model id the mock understands for a model trained on `size` records.
pub fn sized_model_id(base: &str, size: u64) -> String {
    format!("{base}{SIZE_TAG}{size}")
}

pub fn size_from_model(model: &str) -> u64 {
    model
        .rfind(SIZE_TAG)
        .and_then(|i| model[i + SIZE_TAG.len()..].parse().ok())
        .unwrap_or(0)
}

/// Backend whose accuracy follows a [`CorrectnessCurve`] of the training-set
/// size named in each request's model id.
pub struct ImprovingMock {
    model: String,
    curve: CorrectnessCurve,
    seed: u64,
    keys: KeyIndex,
}

impl ImprovingMock {
    pub fn new(model: impl Into<String>, curve: CorrectnessCurve, seed: u64, keys: KeyIndex) -> ImprovingMock {
        ImprovingMock { model: model.into(), curve, seed, keys }
    }

    pub fn curve(&self) -> &CorrectnessCurve {
        &self.curve
    }

    /// Uniform draw in [0, 1) fixed by (seed, question, request seed). The
    /// draw does not depend on model size, so a question answered correctly
    /// by a smaller model stays correct for every larger one.
    fn draw(&self, question_id: &str, request_seed: u64) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(question_id.as_bytes());
        h.update(request_seed.to_le_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    fn respond(&self, q: &Question, correct: bool, size: u64) -> String {
        let answer = if correct {
            q.answer_key.as_str().to_string()
        } else {
            wrong_answer(q)
        };
        format!(
            "Step 1: identify what the question asks about.\n\
             Step 2: weigh each candidate against the relevant knowledge (model trained on {size} records).\n\
             Step 3: settle on the best-supported choice.\n\
             Answer: {answer}"
        )
    }
}

fn wrong_answer(q: &Question) -> String {
    match q.format {
        Format::FillInBlank => "unknown".to_string(),
        _ => {
            let key = q.answer_key.as_str();
            q.labels()
                .find(|l| key.len() != 1 || !key.contains(*l))
                .map(String::from)
                .unwrap_or_else(|| "Z".into())
        }
    }
}

impl Backend for ImprovingMock {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let Some(q) = self.keys.lookup(&request.user_text()) else {
            return Ok(Completion::text(super::scripted::REFUSAL));
        };
        let size = size_from_model(&request.model);
        let p = self.curve.at(size);
        let correct = self.draw(&q.id, request.seed.unwrap_or(0)) < p;
        Ok(Completion::text(self.respond(q, correct, size)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Message;
    use crate::engine::extract_answer;
    use crate::synthetic;

    #[test]
    fn curve_interpolates_and_clamps() {
        let c = CorrectnessCurve::new([(0, 0.4), (100, 0.7)]).unwrap();
        assert_eq!(c.at(0), 0.4);
        assert!((c.at(50) - 0.55).abs() < 1e-12);
        assert_eq!(c.at(100), 0.7);
        assert_eq!(c.at(10_000), 0.7);
        let late = CorrectnessCurve::new([(10, 0.2)]).unwrap();
        assert_eq!(late.at(0), 0.2);
    }

    #[test]
    fn non_monotone_curve_rejected() {
        assert_eq!(CorrectnessCurve::new([(0, 0.5), (10, 0.4)]), Err(CurveError::NonMonotone(0, 10)));
        assert!(CorrectnessCurve::new([(0, 1.5)]).is_err());
        let parsed: Result<CorrectnessCurve, _> = serde_json::from_str(r#"{"0":0.9,"5":0.1}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn size_parsing() {
        assert_eq!(size_from_model("m0"), 0);
        assert_eq!(size_from_model(&sized_model_id("m0+abc", 120)), 120);
    }

    fn rate(curve: CorrectnessCurve, size: u64, n: usize, seed: u64) -> f64 {
        let qs = synthetic::corpus(n, 11);
        let mock = ImprovingMock::new("mock", curve, seed, KeyIndex::new(qs.clone()));
        let model = sized_model_id("m0", size);
        let mut correct = 0;
        for (i, q) in qs.iter().enumerate() {
            let r = ChatRequest::new(model.clone(), vec![Message::user(q.render())], 0.6).with_seed(i as u64);
            let text = mock.complete(&r).unwrap().text;
            if extract_answer(&text, q).ok().map(|e| e.answer) == Some(q.answer_key.clone()) {
                correct += 1;
            }
        }
        correct as f64 / n as f64
    }

    #[test]
    fn probability_extremes() {
        assert_eq!(rate(CorrectnessCurve::constant(0.0).unwrap(), 0, 200, 1), 0.0);
        assert_eq!(rate(CorrectnessCurve::new([(0, 0.0), (10, 1.0)]).unwrap(), u64::MAX, 200, 1), 1.0);
    }

    #[test]
    fn empirical_rate_tracks_curve() {
        let curve = CorrectnessCurve::new([(0, 0.4), (100, 0.7)]).unwrap();
        for (size, expected) in [(0u64, 0.4), (100, 0.7), (50, 0.55)] {
            let r = rate(curve.clone(), size, 1000, 42);
            assert!((r - expected).abs() <= 0.05, "size {size}: rate {r} vs {expected}");
        }
    }

    #[test]
    fn transcripts_reproduce() {
        let qs = synthetic::corpus(20, 3);
        let curve = CorrectnessCurve::constant(0.5).unwrap();
        let a = ImprovingMock::new("m", curve.clone(), 9, KeyIndex::new(qs.clone()));
        let b = ImprovingMock::new("m", curve, 9, KeyIndex::new(qs.clone()));
        for q in &qs {
            let r = ChatRequest::new("m#sft=3", vec![Message::user(q.render())], 0.6).with_seed(5);
            assert_eq!(a.complete(&r).unwrap(), b.complete(&r).unwrap());
        }
    }

    #[test]
    fn key_index_prefers_longest_stem() {
        let qs = synthetic::corpus(30, 5);
        let idx = KeyIndex::new(qs.clone());
        for q in &qs {
            assert_eq!(idx.lookup(&format!("Please answer:\n{}", q.render())).map(|x| &x.id), Some(&q.id));
        }
        assert!(idx.lookup("nothing here").is_none());
    }
}

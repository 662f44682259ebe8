use serde::{Deserialize, Serialize};

use crate::backend::{derive_seed, Backend, BackendError, ChatRequest, REASONING_TEMPERATURE};
use crate::engine::{extract_answer, verify, PromptTemplate};
use crate::model::Question;
use crate::par;

/// Rates are compared with this slack so that a threshold written to two
/// decimals (0.67) admits the fraction it abbreviates (2/3).
const THRESHOLD_SLACK: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageResult {
    pub question: Question,
    pub correct: u32,
    pub trials: u32,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriageOutcome {
    pub high_confidence: Vec<TriageResult>,
    /// Items to send to human review.
    pub flagged: Vec<TriageResult>,
}

#[derive(Debug, Clone)]
pub struct TriageParams<'a> {
    pub model: &'a str,
    pub n_trials: u32,
    pub confidence_threshold: f64,
    pub template: &'a PromptTemplate,
    pub seed: u64,
    pub concurrency: usize,
}

/// Answers each item `n_trials` times and splits items by how often the
/// model got them right.
pub fn triage_by_model(items: &[Question], backend: &dyn Backend, params: &TriageParams<'_>) -> Result<TriageOutcome, BackendError> {
    let trials = params.n_trials.max(1);
    let results = par::try_map(items, params.concurrency, |q| {
        let messages = params.template.render(q);
        let mut correct = 0;
        for t in 0..trials {
            let seed = derive_seed(params.seed, &format!("triage:{}", q.id), u64::from(t));
            let req = ChatRequest::new(params.model, messages.clone(), REASONING_TEMPERATURE).with_seed(seed);
            let reply = backend.complete(&req)?;
            if extract_answer(&reply.text, q).is_ok_and(|e| verify(&e.answer, &q.answer_key)) {
                correct += 1;
            }
        }
        Ok::<_, BackendError>(TriageResult { question: q.clone(), correct, trials, rate: f64::from(correct) / f64::from(trials) })
    })?;
    let mut out = TriageOutcome::default();
    for r in results {
        if r.rate >= params.confidence_threshold - THRESHOLD_SLACK {
            out.high_confidence.push(r);
        } else {
            out.flagged.push(r);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{KeyIndex, Outcome, ScriptedBackend};
    use crate::synthetic;

    fn params(template: &PromptTemplate, threshold: f64) -> TriageParams<'_> {
        TriageParams { model: "m", n_trials: 3, confidence_threshold: threshold, template, seed: 1, concurrency: 2 }
    }

    #[test]
    fn always_correct() {
        let qs = synthetic::corpus(5, 1);
        let backend = ScriptedBackend::oracle("m", KeyIndex::new(qs.clone()));
        let t = PromptTemplate::exam();
        let out = triage_by_model(&qs, &backend, &params(&t, 1.0)).unwrap();
        assert_eq!(out.high_confidence.len(), 5);
        assert!(out.flagged.is_empty());
    }

    #[test]
    fn always_wrong() {
        let qs = synthetic::corpus(4, 1);
        let backend = ScriptedBackend::fixed("m", "no idea");
        let t = PromptTemplate::exam();
        let out = triage_by_model(&qs, &backend, &params(&t, 0.5)).unwrap();
        assert_eq!(out.flagged.len(), 4);
        assert!(out.flagged.iter().all(|r| r.rate == 0.0));
    }

    #[test]
    fn two_of_three_meets_point_six_seven() {
        let qs = synthetic::corpus(1, 4);
        let key = qs[0].answer_key.to_string();
        // trials run in order on one item: wrong, right, right
        let backend = ScriptedBackend::from_fn("m", move |_, call| {
            if call == 0 {
                Outcome::Text("Answer: Z".into())
            } else {
                Outcome::Text(format!("Answer: {key}"))
            }
        });
        let t = PromptTemplate::exam();
        let out = triage_by_model(&qs, &backend, &params(&t, 0.67)).unwrap();
        assert_eq!(out.high_confidence.len(), 1);
        assert_eq!(out.high_confidence[0].correct, 2);
        let backend = ScriptedBackend::from_fn("m", |_, _| Outcome::Text("Answer: Z".into()));
        assert_eq!(triage_by_model(&qs, &backend, &params(&t, 0.67)).unwrap().flagged.len(), 1);
    }

    #[test]
    fn errors_propagate() {
        let qs = synthetic::corpus(2, 1);
        let backend = ScriptedBackend::from_fn("m", |_, _| Outcome::AuthError);
        let t = PromptTemplate::exam();
        assert!(triage_by_model(&qs, &backend, &params(&t, 0.5)).is_err());
    }
}

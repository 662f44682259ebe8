use std::path::Path;

use serde::{Deserialize, Serialize};

use super::extract::{split_response, verify};
use crate::backend::{derive_seed, Backend, BackendError, ChatRequest, Message, REASONING_TEMPERATURE};
use crate::io::{self, IoError};
use crate::model::{CandidateTrace, Extracted, Format, Question, Sampling};

/// Prompt used to ask a model for reasoning plus a final answer.
///
/// Placeholders in `user`: `{question}` (stem and options), `{stem}`,
/// `{options}` and `{answer_format}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system: String,
    pub user: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            system: "You are a careful candidate sitting a medical licensing examination.".into(),
            user: "Answer the following question. Reason step by step, then write the final answer \
                   on its own last line as \"Answer: {answer_format}\".\n\n{question}"
                .into(),
        }
    }
}

impl PromptTemplate {
    /// Template used for exam evaluation: same output contract, no request
    /// for extended reasoning.
    pub fn exam() -> PromptTemplate {
        PromptTemplate {
            system: "You are a candidate sitting a medical licensing examination.".into(),
            user: "Answer the following question. End your reply with a line \"Answer: {answer_format}\".\n\n{question}"
                .into(),
        }
    }

    /// Loads a `.json` template, or treats any other file as the user
    /// template text with the default system prompt.
    pub fn load(path: &Path) -> Result<PromptTemplate, IoError> {
        if path.extension().is_some_and(|e| e == "json") {
            return io::read_json_file(path);
        }
        let user = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        if !user.contains("{question}") && !user.contains("{stem}") {
            return Err(IoError::invalid(path, "template must contain {question} or {stem}"));
        }
        Ok(PromptTemplate { user, ..PromptTemplate::default() })
    }

    pub fn render(&self, question: &Question) -> Vec<Message> {
        let options = question
            .options
            .iter()
            .map(|o| format!("{}. {}", o.label, o.text.trim()))
            .collect::<Vec<_>>()
            .join("\n");
        let answer_format = match question.format {
            Format::McqSingle => "<letter>",
            Format::McqMulti => "<letters>",
            Format::FillInBlank => "<text>",
        };
        let user = self
            .user
            .replace("{question}", &question.render())
            .replace("{stem}", question.stem.trim())
            .replace("{options}", &options)
            .replace("{answer_format}", answer_format);
        let mut messages = Vec::with_capacity(2);
        if !self.system.is_empty() {
            messages.push(Message::system(self.system.clone()));
        }
        messages.push(Message::user(user));
        messages
    }
}

#[derive(Debug, Clone)]
pub struct GenerationParams<'a> {
    pub model: &'a str,
    pub max_attempts: u32,
    pub stop_on_first_success: bool,
    pub template: &'a PromptTemplate,
    pub seed: u64,
}

/// Samples up to `max_attempts` reasoning traces for one question at the
/// reasoning temperature, each with its own derived seed, and verifies each
/// extracted answer against the key.
pub fn generate_candidates(
    question: &Question,
    backend: &dyn Backend,
    params: &GenerationParams<'_>,
) -> Result<Vec<CandidateTrace>, BackendError> {
    let messages = params.template.render(question);
    let mut traces = Vec::new();
    for attempt in 0..params.max_attempts.max(1) {
        let seed = derive_seed(params.seed, &question.id, u64::from(attempt));
        let request = ChatRequest::new(params.model, messages.clone(), REASONING_TEMPERATURE).with_seed(seed);
        let completion = backend.complete(&request)?;
        let (cot, extraction) = split_response(&completion.text, question);
        let (extracted, verified) = match extraction {
            Ok(e) => {
                let ok = verify(&e.answer, &question.answer_key) && !cot.is_empty();
                (Extracted::Answer(e.answer), ok)
            }
            Err(_) => (Extracted::ExtractionFailed, false),
        };
        traces.push(CandidateTrace {
            question_id: question.id.clone(),
            attempt_index: attempt,
            chain_of_thought: cot,
            raw_response: completion.text,
            extracted_answer: extracted,
            verified,
            backend_model: params.model.to_string(),
            sampling: Sampling { temperature: REASONING_TEMPERATURE, seed },
        });
        if verified && params.stop_on_first_success {
            break;
        }
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{KeyIndex, Outcome, ScriptedBackend};
    use crate::synthetic;

    fn params(template: &PromptTemplate, max_attempts: u32, stop: bool) -> GenerationParams<'_> {
        GenerationParams { model: "m0", max_attempts, stop_on_first_success: stop, template, seed: 1 }
    }

    #[test]
    fn always_correct_stops_after_one() {
        let qs = synthetic::corpus(1, 1);
        let backend = ScriptedBackend::oracle("m0", KeyIndex::new(qs.clone()));
        let t = PromptTemplate::default();
        let traces = generate_candidates(&qs[0], &backend, &params(&t, 8, true)).unwrap();
        assert_eq!(traces.len(), 1);
        assert!(traces[0].verified);
        assert_eq!(traces[0].sampling.temperature, 0.6);
    }

    #[test]
    fn always_wrong_uses_every_attempt() {
        let qs = synthetic::corpus(1, 1);
        let wrong = if qs[0].answer_key.as_str() == "A" { "B" } else { "A" };
        let backend = ScriptedBackend::fixed("m0", format!("hmm\nAnswer: {wrong}"));
        let t = PromptTemplate::default();
        let traces = generate_candidates(&qs[0], &backend, &params(&t, 3, true)).unwrap();
        assert_eq!(traces.len(), 3);
        assert!(traces.iter().all(|t| !t.verified));
        let seeds: std::collections::HashSet<_> = traces.iter().map(|t| t.sampling.seed).collect();
        assert_eq!(seeds.len(), 3);
    }

    #[test]
    fn correct_only_on_second_attempt() {
        let qs = synthetic::corpus(1, 2);
        let key = qs[0].answer_key.to_string();
        let backend = ScriptedBackend::from_fn("m0", move |_, call| {
            if call == 1 {
                Outcome::Text(format!("because\nAnswer: {key}"))
            } else {
                Outcome::Text("no idea".into())
            }
        });
        let t = PromptTemplate::default();
        let traces = generate_candidates(&qs[0], &backend, &params(&t, 8, true)).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].extracted_answer, Extracted::ExtractionFailed);
        assert!(!traces[0].verified);
        assert!(traces[1].verified);
        assert_eq!(traces[1].chain_of_thought, "because");
    }

    #[test]
    fn keep_going_when_not_stopping() {
        let qs = synthetic::corpus(1, 1);
        let backend = ScriptedBackend::oracle("m0", KeyIndex::new(qs.clone()));
        let t = PromptTemplate::default();
        let traces = generate_candidates(&qs[0], &backend, &params(&t, 4, false)).unwrap();
        assert_eq!(traces.len(), 4);
    }

    #[test]
    fn backend_errors_propagate() {
        let qs = synthetic::corpus(1, 1);
        let backend = ScriptedBackend::from_fn("m0", |_, _| Outcome::AuthError);
        let t = PromptTemplate::default();
        assert!(matches!(generate_candidates(&qs[0], &backend, &params(&t, 2, true)), Err(BackendError::Auth(_))));
    }

    #[test]
    fn render_fills_placeholders() {
        let qs = synthetic::corpus(1, 1);
        let msgs = PromptTemplate::default().render(&qs[0]);
        assert_eq!(msgs.len(), 2);
        assert!(msgs[1].content.contains(&qs[0].render()));
        assert!(msgs[1].content.contains("Answer: <letter>"));
        assert!(!msgs[1].content.contains('{'));
    }
}

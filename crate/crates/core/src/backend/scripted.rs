use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mock::KeyIndex;
use super::{Backend, BackendError, ChatRequest, Completion};

/// What a scripted backend does on one call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Text(String),
    Timeout,
    RateLimited,
    ServerError(u16),
    AuthError,
    Malformed,
}

impl Outcome {
    fn into_result(self) -> Result<Completion, BackendError> {
        match self {
            Outcome::Text(t) => Ok(Completion::text(t)),
            Outcome::Timeout => Err(BackendError::Timeout { attempts: 1 }),
            Outcome::RateLimited => Err(BackendError::RateLimited { attempts: 1 }),
            Outcome::ServerError(status) => Err(BackendError::Server { status, attempts: 1 }),
            Outcome::AuthError => Err(BackendError::Auth("scripted".into())),
            Outcome::Malformed => Err(BackendError::Protocol("scripted malformed response".into())),
        }
    }
}

/// Serializable scripts, usable from backend config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Script {
    /// Same text for every call.
    Fixed { text: String },
    /// Response keyed by the request's prompt hash.
    Map {
        responses: BTreeMap<String, String>,
        #[serde(default)]
        default: Option<Outcome>,
    },
    /// Outcomes in call order; `then` repeats once the list is used up.
    Sequence {
        outcomes: Vec<Outcome>,
        #[serde(default)]
        then: Option<Box<Outcome>>,
    },
    /// Declines to answer anything.
    Refuse,
    /// Answers every known question correctly. Needs a key index.
    Oracle,
}

pub const REFUSAL: &str = "I cannot determine the answer.";

type ScriptFn = dyn Fn(&ChatRequest, u64) -> Outcome + Send + Sync;

enum Behaviour {
    Script(Script),
    Oracle(KeyIndex),
    Func(Arc<ScriptFn>),
}

/// Deterministic backend driven by a script.
pub struct ScriptedBackend {
    model: String,
    behaviour: Behaviour,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(model: impl Into<String>, script: Script) -> ScriptedBackend {
        ScriptedBackend { model: model.into(), behaviour: Behaviour::Script(script), calls: AtomicU64::new(0) }
    }

    pub fn fixed(model: impl Into<String>, text: impl Into<String>) -> ScriptedBackend {
        ScriptedBackend::new(model, Script::Fixed { text: text.into() })
    }

    /// Always-correct backend over the questions in `keys`.
    pub fn oracle(model: impl Into<String>, keys: KeyIndex) -> ScriptedBackend {
        ScriptedBackend { model: model.into(), behaviour: Behaviour::Oracle(keys), calls: AtomicU64::new(0) }
    }

    /// Backend computed by a closure of (request, zero-based call index).
    pub fn from_fn<F>(model: impl Into<String>, f: F) -> ScriptedBackend
    where
        F: Fn(&ChatRequest, u64) -> Outcome + Send + Sync + 'static,
    {
        ScriptedBackend { model: model.into(), behaviour: Behaviour::Func(Arc::new(f)), calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let index = self.calls.fetch_add(1, Ordering::SeqCst);
        let outcome = match &self.behaviour {
            Behaviour::Script(Script::Fixed { text }) => Outcome::Text(text.clone()),
            Behaviour::Script(Script::Map { responses, default }) => {
                match responses.get(&request.prompt_hash()) {
                    Some(t) => Outcome::Text(t.clone()),
                    None => default.clone().unwrap_or(Outcome::Text(REFUSAL.into())),
                }
            }
            Behaviour::Script(Script::Sequence { outcomes, then }) => {
                match outcomes.get(index as usize) {
                    Some(o) => o.clone(),
                    None => then.as_deref().cloned().unwrap_or(Outcome::Text(REFUSAL.into())),
                }
            }
            Behaviour::Script(Script::Refuse) | Behaviour::Script(Script::Oracle) => {
                Outcome::Text(REFUSAL.into())
            }
            Behaviour::Oracle(keys) => match keys.lookup(&request.user_text()) {
                Some(q) => Outcome::Text(format!(
                    "Recall the relevant knowledge and compare each option in turn.\nAnswer: {}",
                    q.answer_key
                )),
                None => Outcome::Text(REFUSAL.into()),
            },
            Behaviour::Func(f) => f(request, index),
        };
        outcome.into_result()
    }
}

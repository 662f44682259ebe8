//! Generation backends.
//!
//! Everything that produces text goes through [`Backend::complete`]. Remote
//! OpenAI-compatible endpoints, scripted fixtures and the improving mock all
//! implement the same trait; [`Governed`] wraps any of them with the
//! concurrency cap, request-rate limit and retry policy.

mod config;
mod http;
mod mock;
mod policy;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{build_backend, BackendConfig, BackendKind, ConfigError};
pub use http::HttpBackend;
pub use mock::{size_from_model, sized_model_id, CorrectnessCurve, CurveError, ImprovingMock, KeyIndex, SIZE_TAG};
pub use policy::{BackendPolicy, Governed, GovernorStats, RetryPolicy};
pub use scripted::{Outcome, Script, ScriptedBackend};

/// Temperature for deterministic calls (verification, exam answering).
pub const DETERMINISTIC_TEMPERATURE: f64 = 0.0;
/// Temperature for reasoning / chain-of-thought generation.
pub const REASONING_TEMPERATURE: f64 = 0.6;
/// top-p and top-k sent alongside deterministic decoding.
pub const DETERMINISTIC_TOP_P: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Message {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Message {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Message {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error("request has no messages")]
    NoMessages,
    #[error("first non-system message must come from the user")]
    FirstNotUser,
    #[error("temperature must be a finite value >= 0")]
    BadTemperature,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            messages,
            temperature,
            max_tokens: 2048,
            seed: None,
            top_p: None,
            top_k: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> ChatRequest {
        self.seed = Some(seed);
        self
    }

    /// Temperature 0 with the narrow top-p/top-k used for deterministic runs.
    pub fn deterministic(mut self) -> ChatRequest {
        self.temperature = DETERMINISTIC_TEMPERATURE;
        self.top_p = Some(DETERMINISTIC_TOP_P);
        self.top_k = Some(1);
        self
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        if self.messages.is_empty() {
            return Err(RequestError::NoMessages);
        }
        match self.messages.iter().find(|m| m.role != Role::System) {
            Some(m) if m.role == Role::User => {}
            _ => return Err(RequestError::FirstNotUser),
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(RequestError::BadTemperature);
        }
        Ok(())
    }

    /// Hash of the conversation content (roles and texts), independent of
    /// sampling parameters. Scripted backends key responses on it.
    pub fn prompt_hash(&self) -> String {
        prompt_hash(&self.messages)
    }

    /// Concatenated user message contents.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn prompt_hash(messages: &[Message]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(serde_json::to_vec(&m.role).expect("role serializes"));
        h.update([0]);
        h.update(m.content.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    /// Number of attempts the governor spent on this completion.
    #[serde(default = "one")]
    pub attempts: u32,
}

fn one() -> u32 {
    1
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Completion {
        Completion { text: text.into(), usage: Usage::default(), attempts: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("server error {status} after {attempts} attempt(s)")]
    Server { status: u16, attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("invalid request: {0}")]
    InvalidRequest(#[from] RequestError),
}

impl BackendError {
    /// Whether the governor should retry this failure.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            BackendError::RateLimited { .. }
                | BackendError::Timeout { .. }
                | BackendError::Server { .. }
                | BackendError::Transport(_)
        )
    }

    pub(crate) fn with_attempts(self, n: u32) -> BackendError {
        match self {
            BackendError::RateLimited { .. } => BackendError::RateLimited { attempts: n },
            BackendError::Timeout { .. } => BackendError::Timeout { attempts: n },
            BackendError::Server { status, .. } => BackendError::Server { status, attempts: n },
            other => other,
        }
    }
}

/// A text generation service.
pub trait Backend: Send + Sync {
    /// Model identifier used when a request does not name one.
    fn model(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

impl fmt::Debug for dyn Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Backend({})", self.model())
    }
}

/// Derives a per-call seed from a base seed and a tag.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use cotloop_core::engine::DEFAULT_MIN_EXPERT_COT_CHARS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Holds the embedded database.
    pub data_dir: PathBuf,
    /// Hard-case queue shared with the pipeline. Without one the
    /// annotation endpoints answer 503.
    pub hardcase_queue: Option<PathBuf>,
    /// Built annotation UI assets, served under /ui.
    pub ui_dir: Option<PathBuf>,
    /// Env var holding comma-separated bearer tokens for annotators.
    pub annotator_tokens_env: String,
    /// Env var holding the bearer token for releasing dataset versions.
    pub admin_token_env: String,
    /// Per client IP.
    pub submissions_per_minute: u32,
    pub min_expert_cot_chars: usize,
    pub max_page_size: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("service-data"),
            hardcase_queue: None,
            ui_dir: None,
            annotator_tokens_env: "COTLOOP_ANNOTATOR_TOKENS".into(),
            admin_token_env: "COTLOOP_ADMIN_TOKEN".into(),
            submissions_per_minute: 30,
            min_expert_cot_chars: DEFAULT_MIN_EXPERT_COT_CHARS,
            max_page_size: 200,
        }
    }
}

/// Bearer tokens, read from the environment at startup.
#[derive(Clone, Default)]
pub struct Secrets {
    pub annotator_tokens: Vec<String>,
    pub admin_token: Option<String>,
}

impl std::fmt::Debug for Secrets {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Secrets")
            .field("annotator_tokens", &self.annotator_tokens.len())
            .field("admin_token", &self.admin_token.is_some())
            .finish()
    }
}

impl Secrets {
    pub fn from_env(config: &ServiceConfig) -> Secrets {
        let annotator_tokens = std::env::var(&config.annotator_tokens_env)
            .map(|v| v.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect())
            .unwrap_or_default();
        let admin_token = std::env::var(&config.admin_token_env).ok().filter(|t| !t.trim().is_empty());
        Secrets { annotator_tokens, admin_token }
    }
}

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mock::{CorrectnessCurve, ImprovingMock, KeyIndex};
use super::scripted::{Script, ScriptedBackend};
use super::{Backend, BackendPolicy, Governed, HttpBackend};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
    ImprovingMock,
}

/// Backend configuration file contents. Credentials are never stored here,
/// only the name of the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub api_key_env_var: Option<String>,
    #[serde(default)]
    pub policy: BackendPolicy,
    #[serde(default)]
    pub script: Option<Script>,
    #[serde(default)]
    pub curve: Option<CorrectnessCurve>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("backend {name}: {message}")]
    Invalid { name: String, message: String },
    #[error("backend {name}: environment variable {var} is not set")]
    MissingCredential { name: String, var: String },
    #[error(transparent)]
    Io(#[from] io::IoError),
}

impl BackendConfig {
    pub fn load(path: &Path) -> Result<BackendConfig, ConfigError> {
        Ok(io::read_json_file(path)?)
    }

    fn invalid(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { name: self.name.clone(), message: message.into() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.policy.validate().map_err(|m| self.invalid(m))?;
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => Err(self.invalid("http backend needs an endpoint")),
            BackendKind::Scripted if self.script.is_none() => Err(self.invalid("scripted backend needs a script")),
            BackendKind::ImprovingMock if self.curve.is_none() => {
                Err(self.invalid("improving_mock backend needs a curve"))
            }
            _ => Ok(()),
        }
    }

    fn model_or_name(&self) -> String {
        if self.model.is_empty() {
            self.name.clone()
        } else {
            self.model.clone()
        }
    }
}

/// Builds a governed backend. `keys` supplies the answer keys needed by the
/// oracle script and the improving mock; it is ignored by the others.
pub fn build_backend(config: &BackendConfig, keys: Option<KeyIndex>) -> Result<Arc<dyn Backend>, ConfigError> {
    config.validate()?;
    let model = config.model_or_name();
    let inner: Box<dyn Backend> = match config.kind {
        BackendKind::Http => {
            let api_key = match &config.api_key_env_var {
                Some(var) => Some(std::env::var(var).map_err(|_| ConfigError::MissingCredential {
                    name: config.name.clone(),
                    var: var.clone(),
                })?),
                None => None,
            };
            let endpoint = config.endpoint.clone().expect("validated");
            Box::new(
                HttpBackend::new(endpoint, model, api_key, config.policy.timeout())
                    .map_err(|e| config.invalid(e.to_string()))?,
            )
        }
        BackendKind::Scripted => match config.script.clone().expect("validated") {
            Script::Oracle => {
                let keys = keys.ok_or_else(|| config.invalid("oracle script needs a question set"))?;
                Box::new(ScriptedBackend::oracle(model, keys))
            }
            script => Box::new(ScriptedBackend::new(model, script)),
        },
        BackendKind::ImprovingMock => {
            let keys = keys.ok_or_else(|| config.invalid("improving_mock needs a question set"))?;
            let curve = config.curve.clone().expect("validated");
            Box::new(ImprovingMock::new(model, curve, config.seed, keys))
        }
    };
    Ok(Arc::new(Governed::new(inner, config.policy.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_shape() {
        let json = r#"{
            "name": "gen",
            "kind": "http",
            "endpoint": "http://localhost:8000/v1",
            "model": "served",
            "api_key_env_var": "COTLOOP_TEST_KEY_UNSET",
            "policy": {"max_concurrency": 4, "requests_per_minute": 60,
                       "retry": {"max_attempts": 5, "backoff_base_ms": 200, "jitter": 0.1},
                       "timeout_ms": 30000}
        }"#;
        let c: BackendConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.policy.retry.max_attempts, 5);
        assert!(matches!(build_backend(&c, None), Err(ConfigError::MissingCredential { .. })));
    }

    #[test]
    fn mock_requires_keys_and_curve() {
        let json = r#"{"name": "mock", "kind": "improving_mock", "curve": {"0": 0.4, "1000": 0.9}, "seed": 7}"#;
        let c: BackendConfig = serde_json::from_str(json).unwrap();
        assert!(build_backend(&c, None).is_err());
        assert!(build_backend(&c, Some(KeyIndex::default())).is_ok());
        let no_curve: BackendConfig = serde_json::from_str(r#"{"name": "m", "kind": "improving_mock"}"#).unwrap();
        assert!(no_curve.validate().is_err());
    }

    #[test]
    fn non_monotone_curve_is_a_config_error() {
        let json = r#"{"name": "mock", "kind": "improving_mock", "curve": {"0": 0.9, "10": 0.1}}"#;
        assert!(serde_json::from_str::<BackendConfig>(json).is_err());
    }
}

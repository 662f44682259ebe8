//! Layered configuration: defaults, then the config file, then
//! `COTLOOP_*` environment variables, then command-line flags.
//!
//! Nested keys in the environment use a double underscore, so
//! `COTLOOP_ENGINE__MAX_ATTEMPTS=4` sets `engine.max_attempts`.

use std::path::{Path, PathBuf};

use figment::providers::{Env, Format, Json, Serialized, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use cotloop_core::backend::BackendConfig;
use cotloop_core::engine::{EngineConfig, PromptTemplate};
use cotloop_core::eval::{Grouping, Mode};
use cotloop_core::ingest::{FilterPolicy, DEFAULT_THRESHOLD};
use cotloop_core::partition::{PartitionPlan, Strategy, StratumKey, DEFAULT_K};
use cotloop_core::sft::TrainerConfig;
use cotloop_service::ServiceConfig;

use crate::error::CliError;

pub const DEFAULT_FILE: &str = "cotloop.toml";
const ENV_PREFIX: &str = "COTLOOP_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    RoundRobin,
    #[default]
    Subject,
    Year,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub k: usize,
    pub strategy: StrategyName,
    pub seed: u64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection { k: DEFAULT_K, strategy: StrategyName::Subject, seed: 0 }
    }
}

impl PartitionSection {
    pub fn plan(&self) -> PartitionPlan {
        let strategy = match self.strategy {
            StrategyName::RoundRobin => Strategy::RoundRobin,
            StrategyName::Subject => Strategy::StratifiedBy(StratumKey::Subject),
            StrategyName::Year => Strategy::StratifiedBy(StratumKey::Year),
            StrategyName::Unit => Strategy::StratifiedBy(StratumKey::Unit),
        };
        PartitionPlan { k_count: self.k, strategy, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Harvested item files, one raw item per line.
    pub raw: Vec<PathBuf>,
    /// Textbook files to segment and synthesize questions from.
    pub textbooks: Vec<PathBuf>,
    pub out: PathBuf,
    pub version: String,
    pub filter: FilterPolicy,
    pub dedup_threshold: f64,
    pub segment_max_chars: usize,
    pub segment_min_chars: usize,
    /// Regex for chapter headings besides Markdown `#` headings.
    pub chapter_pattern: Option<String>,
    pub line_filter: Option<PathBuf>,
    pub synth_template: Option<PathBuf>,
    pub synth_items: usize,
    /// Answers per item for triage; 0 skips triage.
    pub triage_trials: u32,
    pub triage_threshold: f64,
    /// Backend for synthesis and triage; the generator when absent.
    pub backend: Option<BackendConfig>,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            raw: Vec::new(),
            textbooks: Vec::new(),
            out: PathBuf::from("data/train.jsonl"),
            version: "train".into(),
            filter: FilterPolicy::default(),
            dedup_threshold: DEFAULT_THRESHOLD,
            segment_max_chars: 2000,
            segment_min_chars: 200,
            chapter_pattern: None,
            line_filter: None,
            synth_template: None,
            synth_items: 5,
            triage_trials: 0,
            triage_threshold: 0.6,
            backend: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub backend: Option<BackendConfig>,
    pub mode: Mode,
    pub grouping: Grouping,
    pub concurrency: usize,
    pub template: Option<PathBuf>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { backend: None, mode: Mode::Deterministic, grouping: Grouping::Sitting, concurrency: 8, template: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Pipeline state: iterations, checkpoints, SFT sets, models.
    pub store: PathBuf,
    /// Training corpus the pipeline partitions.
    pub dataset: PathBuf,
    /// Id of M_0 as the generation backend knows it.
    pub base_model: String,
    pub partition: PartitionSection,
    pub engine: EngineConfig,
    pub prompt_template: Option<PathBuf>,
    pub generator: Option<BackendConfig>,
    pub trainer: TrainerConfig,
    pub ingest: IngestSection,
    pub evaluate: EvaluateSection,
    pub service: ServiceConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            store: PathBuf::from("cotloop-store"),
            dataset: PathBuf::from("data/train.jsonl"),
            base_model: "base".into(),
            partition: PartitionSection::default(),
            engine: EngineConfig::default(),
            prompt_template: None,
            generator: None,
            trainer: TrainerConfig::default(),
            ingest: IngestSection::default(),
            evaluate: EvaluateSection::default(),
            service: ServiceConfig::default(),
        }
    }
}

const TOP_LEVEL: [&str; 11] = [
    "store",
    "dataset",
    "base_model",
    "partition",
    "engine",
    "prompt_template",
    "generator",
    "trainer",
    "ingest",
    "evaluate",
    "service",
];

/// Sets `value` at a dotted path inside `overrides`.
pub fn set(overrides: &mut Map<String, Value>, path: &str, value: impl Into<Value>) {
    let mut parts = path.split('.').peekable();
    let mut node = overrides;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            node.insert(part.to_string(), value.into());
            return;
        }
        node = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("override paths do not collide");
    }
}

/// Resolves the effective configuration. An explicit `file` must exist;
/// otherwise `cotloop.toml` in the working directory is used if present.
pub fn load(file: Option<&Path>, overrides: Map<String, Value>) -> Result<CliConfig, CliError> {
    let mut fig = Figment::new();
    let file = match file {
        Some(f) if !f.exists() => return Err(CliError::Config(format!("config file {} does not exist", f.display()))),
        Some(f) => Some(f.to_path_buf()),
        None => Some(PathBuf::from(DEFAULT_FILE)).filter(|p| p.exists()),
    };
    if let Some(f) = &file {
        fig = if f.extension().is_some_and(|e| e == "json") { fig.merge(Json::file(f)) } else { fig.merge(Toml::file(f)) };
    }
    let env = Env::prefixed(ENV_PREFIX)
        .split("__")
        .filter(|k| {
            let top = k.as_str().split('.').next().unwrap_or_default();
            TOP_LEVEL.iter().any(|t| t.eq_ignore_ascii_case(top))
        });
    fig = fig.merge(env).merge(Serialized::defaults(Value::Object(overrides)));
    // Going through JSON lets integer-keyed maps (mock curves) come from
    // TOML tables, whose keys are always strings.
    let value: Value = fig.extract().map_err(|e| CliError::Config(e.to_string()))?;
    let config: CliConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl CliConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.partition.k == 0 {
            return bad("partition.k must be at least 1".into());
        }
        if self.engine.max_attempts == 0 {
            return bad("engine.max_attempts must be at least 1".into());
        }
        if self.base_model.trim().is_empty() {
            return bad("base_model must not be empty".into());
        }
        if !(0.0..=1.0).contains(&self.ingest.triage_threshold) {
            return bad("ingest.triage_threshold must lie in [0, 1]".into());
        }
        for b in [&self.generator, &self.ingest.backend, &self.evaluate.backend].into_iter().flatten() {
            b.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Engine settings with the prompt template file applied.
    pub fn engine(&self) -> Result<EngineConfig, CliError> {
        let mut engine = self.engine.clone();
        if let Some(path) = &self.prompt_template {
            engine.template = PromptTemplate::load(path).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(engine)
    }

    pub fn generator(&self) -> Result<&BackendConfig, CliError> {
        self.generator.as_ref().ok_or_else(|| CliError::Config("no [generator] backend configured".into()))
    }

    pub fn partition_path(&self) -> PathBuf {
        self.store.join("partition.json")
    }

    pub fn queue_path(&self) -> PathBuf {
        self.store.join("hardcases.json")
    }
}

//! The cumulative fine-tuning set and the models trained on it.
//!
//! Every round's set is the union of all iteration datasets so far, and
//! every model is trained from the same base model. The store refuses to
//! train from anything else.

mod trainer;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CotDataset, IterationPaths};
use crate::io::{self, IoError};
use crate::model::{CotRecord, QaDataset, RecordSource};

pub use trainer::{build_trainer, CommandTrainer, HttpTrainer, MockTrainer, Trained, Trainer, TrainerConfig, TrainerKind};

/// System prompt of every exported training example.
pub const SFT_INSTRUCTION: &str =
    "You are an expert in traditional Chinese medicine. Reason step by step, then give the final answer.";

#[derive(Debug, Error)]
pub enum SftError {
    #[error("cannot add iteration {got} onto a set that ends at iteration {upto}")]
    IterationGap { upto: u32, got: u32 },
    #[error("question {0} already has a different record in an earlier iteration")]
    DuplicateQuestionConflict(String),
    #[error("iteration {0} dataset is missing or does not match the manifest")]
    MissingConstituent(u32),
    #[error("question {0} is not in the QA dataset")]
    UnknownQuestion(String),
    #[error("training must start from the base model {base}, got {given}")]
    NotBaseModel { given: String, base: String },
    #[error("trainer failed: {0}")]
    TrainerFailed(String),
    #[error("trainer did not finish within {0:?}")]
    TrainerTimeout(std::time::Duration),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constituent {
    pub iteration: u32,
    pub record_count: usize,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftManifest {
    pub upto_iteration: u32,
    pub constituents: Vec<Constituent>,
    pub base_model: String,
    pub total_records: usize,
    pub manifest_hash: String,
}

fn manifest_hash(base_model: &str, constituents: &[Constituent]) -> String {
    let mut text = format!("base={base_model}\n");
    for c in constituents {
        text.push_str(&format!("{}:{}:{}\n", c.iteration, c.record_count, c.content_hash));
    }
    io::sha256_hex(text.as_bytes())
}

impl SftManifest {
    /// The set before the first iteration: nothing.
    pub fn empty(base_model: &str) -> SftManifest {
        SftManifest {
            upto_iteration: 0,
            constituents: Vec::new(),
            base_model: base_model.to_string(),
            total_records: 0,
            manifest_hash: manifest_hash(base_model, &[]),
        }
    }

    /// Checks gap-free constituents, the record total and the hash.
    pub fn is_consistent(&self) -> bool {
        let gap_free = self.constituents.iter().enumerate().all(|(i, c)| c.iteration == i as u32 + 1);
        gap_free
            && self.constituents.len() == self.upto_iteration as usize
            && self.total_records == self.constituents.iter().map(|c| c.record_count).sum::<usize>()
            && self.manifest_hash == manifest_hash(&self.base_model, &self.constituents)
    }
}

fn record_bytes(r: &CotRecord) -> Vec<u8> {
    serde_json::to_vec(r).expect("record serializes")
}

/// Adds iteration k's dataset onto the set for k-1. A question already in
/// the set is a conflict unless its new record is byte-identical, in which
/// case the repeat is skipped.
pub fn aggregate(prior: &SftManifest, prior_records: &[CotRecord], new_set: &CotDataset) -> Result<(SftManifest, Vec<CotRecord>), SftError> {
    if new_set.iteration != prior.upto_iteration + 1 {
        return Err(SftError::IterationGap { upto: prior.upto_iteration, got: new_set.iteration });
    }
    let mut existing: HashMap<&str, Vec<Vec<u8>>> = HashMap::new();
    for r in prior_records {
        existing.entry(r.question_id.as_str()).or_default().push(record_bytes(r));
    }
    let mut contributed = Vec::new();
    for r in &new_set.records {
        match existing.get(r.question_id.as_str()) {
            None => contributed.push(r.clone()),
            Some(prev) if prev.contains(&record_bytes(r)) => {}
            Some(_) => return Err(SftError::DuplicateQuestionConflict(r.question_id.clone())),
        }
    }
    let mut constituents = prior.constituents.clone();
    constituents.push(Constituent {
        iteration: new_set.iteration,
        record_count: contributed.len(),
        content_hash: io::sha256_hex(&io::to_jsonl_bytes(&contributed)),
    });
    let manifest = SftManifest {
        upto_iteration: new_set.iteration,
        total_records: prior.total_records + contributed.len(),
        manifest_hash: manifest_hash(&prior.base_model, &constituents),
        constituents,
        base_model: prior.base_model.clone(),
    };
    Ok((manifest, contributed))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub question_id: String,
    pub iteration: u32,
    pub source: RecordSource,
    pub messages: Vec<ChatTurn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSidecar {
    pub manifest_hash: String,
    pub file_hash: String,
    pub lines: usize,
}

/// Training examples for the given records, ordered by iteration then
/// question id.
pub fn sft_examples(records: &[CotRecord], dataset: &QaDataset) -> Result<Vec<SftExample>, SftError> {
    let index = dataset.index();
    let mut sorted: Vec<&CotRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (a.iteration, &a.question_id).cmp(&(b.iteration, &b.question_id)));
    sorted
        .into_iter()
        .map(|r| {
            let q = index.get(r.question_id.as_str()).ok_or_else(|| SftError::UnknownQuestion(r.question_id.clone()))?;
            Ok(SftExample {
                question_id: r.question_id.clone(),
                iteration: r.iteration,
                source: r.source,
                messages: vec![
                    ChatTurn { role: "system".into(), content: SFT_INSTRUCTION.into() },
                    ChatTurn { role: "user".into(), content: q.render() },
                    ChatTurn {
                        role: "assistant".into(),
                        content: format!("{}\nAnswer: {}", r.chain_of_thought, r.final_answer),
                    },
                ],
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub base_model: String,
    /// Set the model was trained on; `None` only for the base model.
    pub manifest_hash: Option<String>,
    #[serde(default)]
    pub trainer: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub id: String,
    pub lineage: Lineage,
    pub created_at: DateTime<Utc>,
}

impl ModelRef {
    pub fn base(id: &str) -> ModelRef {
        ModelRef {
            id: id.to_string(),
            lineage: Lineage { base_model: id.to_string(), manifest_hash: None, trainer: BTreeMap::new() },
            created_at: Utc::now(),
        }
    }

    pub fn is_base(&self) -> bool {
        self.lineage.manifest_hash.is_none() && self.lineage.base_model == self.id
    }
}

/// Trains a fresh model from the base on an exported set.
pub fn train(base: &ModelRef, manifest: &SftManifest, export: &Path, trainer: &dyn Trainer) -> Result<ModelRef, SftError> {
    if !base.is_base() || base.id != manifest.base_model {
        return Err(SftError::NotBaseModel { given: base.id.clone(), base: manifest.base_model.clone() });
    }
    let trained = trainer.train(&base.id, export, manifest)?;
    Ok(ModelRef {
        id: trained.model_id,
        lineage: Lineage {
            base_model: base.id.clone(),
            manifest_hash: Some(manifest.manifest_hash.clone()),
            trainer: trained.metadata,
        },
        created_at: Utc::now(),
    })
}

/// On-disk layout of a pipeline run:
///
/// ```text
/// <root>/iterations/<k>/   checkpoint, cot.jsonl, stats, rejects
/// <root>/sft/manifest-<k>.json, sft-<k>.jsonl, sft-<k>.export.json
/// <root>/models.json
/// ```
#[derive(Debug, Clone)]
pub struct SftStore {
    root: PathBuf,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ModelRegistry {
    base: Option<ModelRef>,
    /// Trained models keyed by the iteration whose set they saw.
    trained: BTreeMap<u32, ModelRef>,
}

impl SftStore {
    pub fn new(root: impl Into<PathBuf>) -> SftStore {
        SftStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn iteration(&self, k: u32) -> IterationPaths {
        IterationPaths::new(self.root.join("iterations").join(k.to_string()))
    }

    pub fn manifest_path(&self, k: u32) -> PathBuf {
        self.root.join("sft").join(format!("manifest-{k}.json"))
    }

    pub fn export_path(&self, k: u32) -> PathBuf {
        self.root.join("sft").join(format!("sft-{k}.jsonl"))
    }

    fn export_sidecar(&self, k: u32) -> PathBuf {
        self.root.join("sft").join(format!("sft-{k}.export.json"))
    }

    fn registry_path(&self) -> PathBuf {
        self.root.join("models.json")
    }

    /// Manifest for iteration k; k = 0 is the empty set.
    pub fn manifest(&self, k: u32, base_model: &str) -> Result<SftManifest, SftError> {
        if k == 0 {
            return Ok(SftManifest::empty(base_model));
        }
        let path = self.manifest_path(k);
        if !path.exists() {
            return Err(SftError::MissingConstituent(k));
        }
        let m: SftManifest = io::read_json_file(&path)?;
        if !m.is_consistent() {
            return Err(SftError::Io(IoError::integrity(&path, "manifest is internally inconsistent")));
        }
        Ok(m)
    }

    /// Resolves every record of a manifest from the iteration datasets.
    pub fn records(&self, manifest: &SftManifest) -> Result<Vec<CotRecord>, SftError> {
        let mut out: Vec<CotRecord> = Vec::new();
        for c in &manifest.constituents {
            let ds = CotDataset::load(&self.iteration(c.iteration)).map_err(|_| SftError::MissingConstituent(c.iteration))?;
            let seen: HashSet<Vec<u8>> = out.iter().map(record_bytes).collect();
            let contributed: Vec<CotRecord> = ds.records.into_iter().filter(|r| !seen.contains(&record_bytes(r))).collect();
            if contributed.len() != c.record_count || io::sha256_hex(&io::to_jsonl_bytes(&contributed)) != c.content_hash {
                return Err(SftError::MissingConstituent(c.iteration));
            }
            out.extend(contributed);
        }
        Ok(out)
    }

    /// Extends the set with iteration k's saved dataset and stores the
    /// manifest. Re-aggregating an already stored iteration returns the
    /// stored manifest when nothing changed.
    pub fn aggregate(&self, k: u32, base_model: &str) -> Result<SftManifest, SftError> {
        let prior = self.manifest(k.saturating_sub(1), base_model)?;
        let prior_records = self.records(&prior)?;
        let new_set = CotDataset::load(&self.iteration(k)).map_err(|_| SftError::MissingConstituent(k))?;
        let (manifest, _) = aggregate(&prior, &prior_records, &new_set)?;
        io::write_json_file(&self.manifest_path(k), &manifest)?;
        Ok(manifest)
    }

    /// Writes the chat-transcript export for a manifest. Equal manifests
    /// give byte-equal files.
    pub fn export(&self, manifest: &SftManifest, dataset: &QaDataset) -> Result<PathBuf, SftError> {
        let records = self.records(manifest)?;
        let examples = sft_examples(&records, dataset)?;
        let bytes = io::to_jsonl_bytes(&examples);
        let path = self.export_path(manifest.upto_iteration);
        io::write_atomic(&path, &bytes)?;
        let sidecar = ExportSidecar {
            manifest_hash: manifest.manifest_hash.clone(),
            file_hash: io::sha256_hex(&bytes),
            lines: examples.len(),
        };
        io::write_json_file(&self.export_sidecar(manifest.upto_iteration), &sidecar)?;
        Ok(path)
    }

    fn registry(&self) -> Result<ModelRegistry, SftError> {
        let path = self.registry_path();
        Ok(if path.exists() { io::read_json_file(&path)? } else { ModelRegistry::default() })
    }

    /// The base model, registering it on first use.
    pub fn base_model(&self, id: &str) -> Result<ModelRef, SftError> {
        let mut reg = self.registry()?;
        match &reg.base {
            Some(m) if m.id == id => Ok(m.clone()),
            Some(m) => Err(SftError::NotBaseModel { given: id.to_string(), base: m.id.clone() }),
            None => {
                let m = ModelRef::base(id);
                reg.base = Some(m.clone());
                io::write_json_file(&self.registry_path(), &reg)?;
                Ok(m)
            }
        }
    }

    pub fn record_model(&self, k: u32, model: &ModelRef) -> Result<(), SftError> {
        let mut reg = self.registry()?;
        let base = reg.base.as_ref().map(|b| b.id.clone()).unwrap_or_default();
        if model.lineage.base_model != base || model.is_base() {
            return Err(SftError::NotBaseModel { given: model.lineage.base_model.clone(), base });
        }
        reg.trained.insert(k, model.clone());
        io::write_json_file(&self.registry_path(), &reg)?;
        Ok(())
    }

    /// Model trained on the set up to iteration k; k = 0 is the base.
    pub fn model(&self, k: u32) -> Result<Option<ModelRef>, SftError> {
        let reg = self.registry()?;
        Ok(if k == 0 { reg.base } else { reg.trained.get(&k).cloned() })
    }

    pub fn models(&self) -> Result<Vec<ModelRef>, SftError> {
        let reg = self.registry()?;
        Ok(reg.base.into_iter().chain(reg.trained.into_values()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::CotStats;
    use crate::model::Answer;
    use crate::synthetic;

    fn stats() -> CotStats {
        CotStats { n_machine: 0, n_expert: 0, acceptance_rate: 0.0, mean_attempts: 0.0 }
    }

    fn records(qs: &[crate::model::Question], iteration: u32) -> Vec<CotRecord> {
        qs.iter()
            .map(|q| CotRecord {
                question_id: q.id.clone(),
                chain_of_thought: format!("reasoning for {}", q.id),
                final_answer: q.answer_key.clone(),
                source: RecordSource::Machine,
                iteration,
                created_by: "m0".into(),
            })
            .collect()
    }

    #[test]
    fn first_iteration_is_the_set_itself() {
        let qs = synthetic::corpus(4, 1);
        let ds = CotDataset::new(1, records(&qs, 1), stats());
        let (m, contributed) = aggregate(&SftManifest::empty("m0"), &[], &ds).unwrap();
        assert_eq!(m.total_records, 4);
        assert_eq!(contributed, ds.records);
        assert_eq!(m.constituents[0].content_hash, ds.content_hash());
        assert!(m.is_consistent());
    }

    #[test]
    fn disjoint_union_and_gap() {
        let qs = synthetic::corpus(17, 2);
        let one = CotDataset::new(1, records(&qs[..10], 1), stats());
        let (m1, r1) = aggregate(&SftManifest::empty("m0"), &[], &one).unwrap();
        let two = CotDataset::new(2, records(&qs[10..], 2), stats());
        let (m2, _) = aggregate(&m1, &r1, &two).unwrap();
        assert_eq!(m2.total_records, 17);
        assert_eq!(m2.upto_iteration, 2);
        let three = CotDataset::new(3, Vec::new(), stats());
        assert!(matches!(aggregate(&m1, &r1, &three), Err(SftError::IterationGap { upto: 1, got: 3 })));
    }

    #[test]
    fn duplicates() {
        let qs = synthetic::corpus(3, 3);
        let one = CotDataset::new(1, records(&qs, 1), stats());
        let (m1, r1) = aggregate(&SftManifest::empty("m0"), &[], &one).unwrap();
        let same = CotDataset::new(2, r1.clone(), stats());
        let (m2, added) = aggregate(&m1, &r1, &same).unwrap();
        assert!(added.is_empty());
        assert_eq!(m2.total_records, 3);
        let mut changed = r1[0].clone();
        changed.final_answer = Answer::text("other");
        let conflict = CotDataset::new(2, vec![changed], stats());
        assert!(matches!(aggregate(&m1, &r1, &conflict), Err(SftError::DuplicateQuestionConflict(_))));
    }

    #[test]
    fn export_format_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let store = SftStore::new(dir.path());
        let qs = synthetic::corpus(3, 4);
        let dataset = QaDataset::new("v1", qs.clone()).unwrap();
        CotDataset::new(1, records(&qs[..1], 1), stats()).save(&store.iteration(1)).unwrap();
        let m1 = store.aggregate(1, "m0").unwrap();
        let path = store.export(&m1, &dataset).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let ex: SftExample = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert!(ex.messages[2].content.ends_with(&format!("Answer: {}", qs[0].answer_key)));
        assert_eq!(ex.messages[0].role, "system");

        CotDataset::new(2, records(&qs[1..], 2), stats()).save(&store.iteration(2)).unwrap();
        let m2 = store.aggregate(2, "m0").unwrap();
        let first = std::fs::read(store.export(&m2, &dataset).unwrap()).unwrap();
        let second = std::fs::read(store.export(&m2, &dataset).unwrap()).unwrap();
        assert_eq!(first, second);
        let lines: Vec<SftExample> = first.split(|b| *b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect();
        let keys: Vec<_> = lines.iter().map(|e| (e.iteration, e.question_id.clone())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(store.records(&m1).unwrap().len(), 1);
    }

    #[test]
    fn tampered_iteration_is_missing() {
        let dir = tempfile::tempdir().unwrap();
        let store = SftStore::new(dir.path());
        let qs = synthetic::corpus(2, 5);
        CotDataset::new(1, records(&qs, 1), stats()).save(&store.iteration(1)).unwrap();
        let m1 = store.aggregate(1, "m0").unwrap();
        CotDataset::new(1, records(&qs[..1], 1), stats()).save(&store.iteration(1)).unwrap();
        assert!(matches!(store.records(&m1), Err(SftError::MissingConstituent(1))));
    }

    #[test]
    fn training_always_restarts_from_base() {
        let dir = tempfile::tempdir().unwrap();
        let store = SftStore::new(dir.path());
        let m0 = store.base_model("m0").unwrap();
        let manifest = SftManifest::empty("m0");
        let export = dir.path().join("x.jsonl");
        std::fs::write(&export, "").unwrap();
        let m1 = train(&m0, &manifest, &export, &MockTrainer).unwrap();
        assert_eq!(m1.id, format!("m0+{}", manifest.manifest_hash));
        assert_eq!(train(&m0, &manifest, &export, &MockTrainer).unwrap().id, m1.id);
        assert!(matches!(train(&m1, &manifest, &export, &MockTrainer), Err(SftError::NotBaseModel { .. })));
        store.record_model(1, &m1).unwrap();
        assert!(store.record_model(2, &m0).is_err());
        assert!(store.models().unwrap().iter().all(|m| m.lineage.base_model == "m0"));
        assert!(matches!(store.base_model("other"), Err(SftError::NotBaseModel { .. })));
    }
}

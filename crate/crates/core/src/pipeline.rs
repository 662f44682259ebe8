//! The full bootstrapping cycle: for each subset k, sample with the model
//! trained on everything accepted so far, grow the cumulative set, and
//! train the next model from the base.
//!
//! Every step is resumable and skips work already on disk.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::backend::Backend;
use crate::engine::{run_iteration, EngineConfig, EngineError, HardCaseQueue, IterationContext, IterationOutput};
use crate::model::{QaDataset, Question};
use crate::partition::{Partition, PartitionError};
use crate::sft::{self, ModelRef, SftError, SftManifest, SftStore, Trainer};

/// Builds the generation backend for a model. The second argument is the
/// size of the set the model was trained on. Returns the backend and the
/// model name to send with requests.
pub type BackendFactory<'a> = dyn Fn(&ModelRef, usize) -> Result<(Arc<dyn Backend>, String), String> + Sync + 'a;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("iteration {k} needs {missing} first")]
    IterationGap { k: u32, missing: String },
    #[error("iteration {k} is outside 1..={max}")]
    OutOfRange { k: u32, max: u32 },
    #[error("cannot build backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u32,
    /// Model name the candidates were sampled from.
    pub generator: String,
    pub subset_size: usize,
    pub records: usize,
    pub n_machine: usize,
    pub n_expert: usize,
    pub acceptance_rate: f64,
    pub mean_attempts: f64,
    pub hard_cases: usize,
    pub sft_total_records: usize,
    pub manifest_hash: String,
    pub trained_model: String,
}

pub struct Pipeline<'a> {
    pub store: &'a SftStore,
    pub dataset: &'a QaDataset,
    pub partition: &'a Partition,
    pub queue: &'a HardCaseQueue,
    pub engine: &'a EngineConfig,
    pub base_model: &'a str,
    pub backend_for: &'a BackendFactory<'a>,
    pub trainer: &'a dyn Trainer,
}

impl Pipeline<'_> {
    pub fn k_max(&self) -> u32 {
        self.partition.k() as u32
    }

    fn check_range(&self, k: u32) -> Result<(), PipelineError> {
        if k == 0 || k > self.k_max() {
            return Err(PipelineError::OutOfRange { k, max: self.k_max() });
        }
        Ok(())
    }

    /// The model that generates for iteration k: the base for k = 1,
    /// otherwise the model trained on the set up to k - 1.
    pub fn generator(&self, k: u32) -> Result<(ModelRef, usize), PipelineError> {
        if k == 1 {
            return Ok((self.store.base_model(self.base_model)?, 0));
        }
        let manifest = self.manifest_if_current(k - 1)?;
        let model = self.store.model(k - 1)?.filter(|m| m.lineage.manifest_hash.as_deref() == Some(&manifest.manifest_hash));
        match model {
            Some(m) => Ok((m, manifest.total_records)),
            None => Err(PipelineError::IterationGap { k, missing: format!("a model trained through iteration {}", k - 1) }),
        }
    }

    fn manifest_if_current(&self, k: u32) -> Result<SftManifest, PipelineError> {
        match self.store.manifest(k, self.base_model) {
            Ok(m) => Ok(m),
            Err(SftError::MissingConstituent(_)) => {
                Err(PipelineError::IterationGap { k: k + 1, missing: format!("the set through iteration {k}") })
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn subset(&self, k: u32) -> Result<Vec<Question>, PipelineError> {
        Ok(self.partition.subset(self.dataset, k as usize)?.into_iter().cloned().collect())
    }

    pub fn run_iteration(&self, k: u32) -> Result<(IterationOutput, String), PipelineError> {
        self.check_range(k)?;
        self.partition.check(self.dataset)?;
        let (model, size) = self.generator(k)?;
        let (backend, model_name) = (self.backend_for)(&model, size).map_err(PipelineError::Backend)?;
        let subset = self.subset(k)?;
        let paths = self.store.iteration(k);
        let out = run_iteration(&IterationContext {
            iteration: k,
            subset_ref: &format!("subset-{k}"),
            subset: &subset,
            backend: backend.as_ref(),
            model_ref: &model_name,
            config: self.engine,
            paths: &paths,
            queue: self.queue,
        })?;
        Ok((out, model_name))
    }

    pub fn aggregate(&self, k: u32) -> Result<SftManifest, PipelineError> {
        self.check_range(k)?;
        if k > 1 {
            self.manifest_if_current(k - 1)?;
        }
        if !self.store.iteration(k).dataset().exists() {
            return Err(PipelineError::IterationGap { k, missing: format!("iteration {k} to run") });
        }
        Ok(self.store.aggregate(k, self.base_model)?)
    }

    pub fn export(&self, k: u32) -> Result<PathBuf, PipelineError> {
        let manifest = self.manifest_if_current(k).map_err(|_| PipelineError::IterationGap {
            k,
            missing: format!("the set through iteration {k} to be aggregated"),
        })?;
        Ok(self.store.export(&manifest, self.dataset)?)
    }

    /// Trains M_k from the base on the set through k. A model already
    /// trained on the same manifest is reused.
    pub fn train(&self, k: u32) -> Result<ModelRef, PipelineError> {
        self.check_range(k)?;
        let manifest = self.manifest_if_current(k).map_err(|_| PipelineError::IterationGap {
            k,
            missing: format!("the set through iteration {k} to be aggregated"),
        })?;
        if let Some(m) = self.store.model(k)? {
            if m.lineage.manifest_hash.as_deref() == Some(&manifest.manifest_hash) {
                return Ok(m);
            }
        }
        let export = self.store.export(&manifest, self.dataset)?;
        let base = self.store.base_model(self.base_model)?;
        let model = sft::train(&base, &manifest, &export, self.trainer)?;
        self.store.record_model(k, &model)?;
        info!(iteration = k, model = %model.id, records = manifest.total_records, "trained");
        Ok(model)
    }

    /// Runs, aggregates and trains iteration k.
    pub fn step(&self, k: u32) -> Result<IterationSummary, PipelineError> {
        let (out, generator) = self.run_iteration(k)?;
        let manifest = self.aggregate(k)?;
        let model = self.train(k)?;
        let stats = &out.dataset.stats;
        Ok(IterationSummary {
            iteration: k,
            generator,
            subset_size: out.state.statuses.len(),
            records: out.dataset.len(),
            n_machine: stats.n_machine,
            n_expert: stats.n_expert,
            acceptance_rate: stats.acceptance_rate,
            mean_attempts: stats.mean_attempts,
            hard_cases: out.hard_cases.len(),
            sft_total_records: manifest.total_records,
            manifest_hash: manifest.manifest_hash,
            trained_model: model.id,
        })
    }

    pub fn run_loop(&self, iterations: u32) -> Result<Vec<IterationSummary>, PipelineError> {
        if iterations > self.k_max() {
            return Err(PipelineError::OutOfRange { k: iterations, max: self.k_max() });
        }
        (1..=iterations).map(|k| self.step(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{sized_model_id, CorrectnessCurve, ImprovingMock, KeyIndex};
    use crate::partition::{partition, PartitionPlan};
    use crate::sft::MockTrainer;
    use crate::synthetic;
    use std::collections::BTreeMap;

    struct Env {
        _dir: tempfile::TempDir,
        store: SftStore,
        dataset: QaDataset,
        partition: Partition,
        queue: HardCaseQueue,
        engine: EngineConfig,
    }

    fn env(n: usize, k: usize) -> Env {
        let dir = tempfile::tempdir().unwrap();
        let dataset = QaDataset::new("train", synthetic::corpus(n, 42)).unwrap();
        let partition = partition(&dataset, &PartitionPlan { k_count: k, ..PartitionPlan::default() }).unwrap();
        Env {
            store: SftStore::new(dir.path().join("store")),
            queue: HardCaseQueue::open(dir.path().join("store/hardcases.json")),
            _dir: dir,
            dataset,
            partition,
            engine: EngineConfig { max_attempts: 2, ..EngineConfig::default() },
        }
    }

    fn mock_factory(dataset: &QaDataset) -> impl Fn(&ModelRef, usize) -> Result<(Arc<dyn Backend>, String), String> + Sync {
        let keys = KeyIndex::new(dataset.items.clone());
        let curve = CorrectnessCurve::new(BTreeMap::from([(0, 0.3), (60, 0.9)])).unwrap();
        move |m: &ModelRef, size: usize| {
            let name = sized_model_id(&m.id, size as u64);
            let backend: Arc<dyn Backend> = Arc::new(ImprovingMock::new(&name, curve.clone(), 7, keys.clone()));
            Ok((backend, name))
        }
    }

    fn pipeline<'a>(e: &'a Env, f: &'a BackendFactory<'a>) -> Pipeline<'a> {
        Pipeline {
            store: &e.store,
            dataset: &e.dataset,
            partition: &e.partition,
            queue: &e.queue,
            engine: &e.engine,
            base_model: "m0",
            backend_for: f,
            trainer: &MockTrainer,
        }
    }

    #[test]
    fn three_iterations_grow_the_set() {
        let e = env(60, 3);
        let f = mock_factory(&e.dataset);
        let p = pipeline(&e, &f);
        let summaries = p.run_loop(3).unwrap();
        let totals: Vec<_> = summaries.iter().map(|s| s.sft_total_records).collect();
        assert!(totals.windows(2).all(|w| w[0] < w[1]), "{totals:?}");
        assert_eq!(summaries[0].generator, "m0#sft=0");
        assert!(summaries[1].generator.starts_with("m0+"));
        for m in e.store.models().unwrap() {
            assert_eq!(m.lineage.base_model, "m0");
        }
        // rerunning is a no-op with identical results
        let again = p.run_loop(3).unwrap();
        assert_eq!(again, summaries);
    }

    #[test]
    fn ordering_guards() {
        let e = env(20, 2);
        let f = mock_factory(&e.dataset);
        let p = pipeline(&e, &f);
        assert!(matches!(p.run_iteration(2), Err(PipelineError::IterationGap { k: 2, .. })));
        assert!(matches!(p.aggregate(1), Err(PipelineError::IterationGap { .. })));
        assert!(matches!(p.train(1), Err(PipelineError::IterationGap { .. })));
        assert!(matches!(p.run_iteration(3), Err(PipelineError::OutOfRange { .. })));
        p.run_iteration(1).unwrap();
        assert!(matches!(p.run_iteration(2), Err(PipelineError::IterationGap { .. })));
        p.aggregate(1).unwrap();
        p.train(1).unwrap();
        p.run_iteration(2).unwrap();
    }
}

use std::fs::{File, TryLockError};
use std::path::Path;
use std::sync::Arc;

use chrono::Utc;
use serde_json::json;
use tracing::{info, warn};

use cotloop_core::backend::{build_backend, sized_model_id, Backend, BackendConfig, BackendKind, KeyIndex};
use cotloop_core::engine::{EngineConfig, HardCaseQueue};
use cotloop_core::io;
use cotloop_core::model::QaDataset;
use cotloop_core::partition::{self, Partition};
use cotloop_core::pipeline::{IterationSummary, Pipeline};
use cotloop_core::sft::{build_trainer, ModelRef, SftStore, Trainer};

use crate::config::CliConfig;
use crate::error::CliError;
use crate::Output;

/// Exclusive hold on a store directory for the life of a command.
pub struct StoreLock {
    _file: File,
}

pub fn lock_store(store: &Path) -> Result<StoreLock, CliError> {
    std::fs::create_dir_all(store).map_err(|e| CliError::Other(format!("{}: {e}", store.display())))?;
    let path = store.join(".lock");
    let file = File::options()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
    match file.try_lock() {
        Ok(()) => Ok(StoreLock { _file: file }),
        Err(TryLockError::WouldBlock) => {
            Err(CliError::Other(format!("store {} is in use by another cotloop process", store.display())))
        }
        Err(TryLockError::Error(e)) => Err(CliError::Other(format!("{}: {e}", path.display()))),
    }
}

/// Records the effective config of a run under `<store>/runs`.
pub fn snapshot(cfg: &CliConfig, dir: &Path, command: &str) -> Result<(), CliError> {
    let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let path = dir.join(format!("{stamp}-{command}.config.json"));
    io::write_json_file(&path, &json!({"command": command, "config": cfg}))?;
    Ok(())
}

fn load_dataset(cfg: &CliConfig) -> Result<QaDataset, CliError> {
    if !cfg.dataset.exists() {
        return Err(CliError::Config(format!("dataset {} does not exist; run `ingest` first", cfg.dataset.display())));
    }
    Ok(QaDataset::load(&cfg.dataset)?)
}

/// Name of the backend's model when the config leaves `model` empty.
pub fn model_name(b: &BackendConfig) -> String {
    if b.model.is_empty() { b.name.clone() } else { b.model.clone() }
}

/// The model a backend kind is asked for when generating with `m`.
/// Mocks learn the training set size from the id; real endpoints serve
/// the trained model under its own id.
fn generator_name(kind: BackendKind, m: &ModelRef, size: usize) -> String {
    match kind {
        BackendKind::ImprovingMock => sized_model_id(&m.id, size as u64),
        BackendKind::Http | BackendKind::Scripted => m.id.clone(),
    }
}

/// Fails early, as a config error, when a key variable is unset.
pub fn check_credential(b: &BackendConfig) -> Result<(), CliError> {
    match &b.api_key_env_var {
        Some(var) if b.kind == BackendKind::Http && std::env::var_os(var).is_none() => {
            Err(CliError::Config(format!("backend {}: environment variable {var} is not set", b.name)))
        }
        _ => Ok(()),
    }
}

struct Loaded {
    store: SftStore,
    dataset: QaDataset,
    partition: Partition,
    queue: HardCaseQueue,
    engine: EngineConfig,
    trainer: Box<dyn Trainer>,
    generator: BackendConfig,
    keys: KeyIndex,
}

impl Loaded {
    fn open(cfg: &CliConfig, create_partition: bool) -> Result<Loaded, CliError> {
        let generator = cfg.generator()?.clone();
        check_credential(&generator)?;
        let dataset = load_dataset(cfg)?;
        let partition = ensure_partition(cfg, &dataset, create_partition)?;
        let trainer = build_trainer(&cfg.trainer, &cfg.store.join("training")).map_err(CliError::Config)?;
        Ok(Loaded {
            store: SftStore::new(&cfg.store),
            keys: KeyIndex::new(dataset.items.clone()),
            dataset,
            partition,
            queue: HardCaseQueue::open(cfg.queue_path()),
            engine: cfg.engine()?,
            trainer,
            generator,
        })
    }

    fn with_pipeline<T>(&self, cfg: &CliConfig, f: impl FnOnce(&Pipeline<'_>) -> Result<T, CliError>) -> Result<T, CliError> {
        let factory = |m: &ModelRef, size: usize| -> Result<(Arc<dyn Backend>, String), String> {
            let name = generator_name(self.generator.kind, m, size);
            let mut c = self.generator.clone();
            c.model = name.clone();
            let backend = build_backend(&c, Some(self.keys.clone())).map_err(|e| e.to_string())?;
            Ok((backend, name))
        };
        let p = Pipeline {
            store: &self.store,
            dataset: &self.dataset,
            partition: &self.partition,
            queue: &self.queue,
            engine: &self.engine,
            base_model: &cfg.base_model,
            backend_for: &factory,
            trainer: self.trainer.as_ref(),
        };
        f(&p)
    }
}

/// Loads the stored partition, or builds it when allowed. A stored
/// partition must match both the dataset and the configured plan.
fn ensure_partition(cfg: &CliConfig, dataset: &QaDataset, create: bool) -> Result<Partition, CliError> {
    let path = cfg.partition_path();
    let plan = cfg.partition.plan();
    if path.exists() {
        let p = Partition::load(&path)?;
        p.check(dataset)?;
        if p.plan != plan {
            return Err(CliError::Config(format!(
                "{} was built with a different plan; remove it (and the store) to re-partition",
                path.display()
            )));
        }
        return Ok(p);
    }
    if !create {
        return Err(CliError::Trainer("no partition yet; run `partition` first".into()));
    }
    let p = partition::partition(dataset, &plan)?;
    p.save(&path)?;
    info!(k = p.k(), items = dataset.len(), "partitioned");
    Ok(p)
}

pub fn partition(cfg: &CliConfig) -> Result<Output, CliError> {
    let _lock = lock_store(&cfg.store)?;
    snapshot(cfg, &cfg.store.join("runs"), "partition")?;
    let dataset = load_dataset(cfg)?;
    let p = ensure_partition(cfg, &dataset, true)?;
    let sizes: Vec<usize> = p.subsets.iter().map(Vec::len).collect();
    let text = format!(
        "partition of {} items into K={}: sizes {:?}\nwritten to {}\n",
        dataset.len(),
        p.k(),
        sizes,
        cfg.partition_path().display()
    );
    Ok(Output { text, json: json!({"k": p.k(), "sizes": sizes, "dataset_hash": p.dataset_hash, "path": cfg.partition_path()}) })
}

pub fn run_iteration(cfg: &CliConfig, k: u32) -> Result<Output, CliError> {
    let _lock = lock_store(&cfg.store)?;
    snapshot(cfg, &cfg.store.join("runs"), &format!("run-iteration-{k}"))?;
    let loaded = Loaded::open(cfg, false)?;
    let (out, generator) = loaded.with_pipeline(cfg, |p| Ok(p.run_iteration(k)?))?;
    let s = &out.dataset.stats;
    let text = format!(
        "iteration {k} with {generator}: {} records ({} machine, {} expert), acceptance {:.4}, mean attempts {:.2}, {} hard cases\n",
        out.dataset.len(),
        s.n_machine,
        s.n_expert,
        s.acceptance_rate,
        s.mean_attempts,
        out.hard_cases.len()
    );
    Ok(Output {
        text,
        json: json!({
            "iteration": k,
            "generator": generator,
            "records": out.dataset.len(),
            "stats": s,
            "hard_cases": out.hard_cases,
            "content_hash": out.dataset.content_hash(),
        }),
    })
}

fn aggregate_through(p: &Pipeline<'_>, upto: u32) -> Result<(), CliError> {
    for j in 1..=upto {
        p.aggregate(j)?;
    }
    Ok(())
}

pub fn export_sft(cfg: &CliConfig, upto: u32) -> Result<Output, CliError> {
    let _lock = lock_store(&cfg.store)?;
    snapshot(cfg, &cfg.store.join("runs"), &format!("export-sft-{upto}"))?;
    let loaded = Loaded::open(cfg, false)?;
    loaded.with_pipeline(cfg, |p| {
        aggregate_through(p, upto)?;
        let path = p.export(upto)?;
        let manifest = loaded.store.manifest(upto, &cfg.base_model)?;
        Ok(Output {
            text: format!(
                "SFT set through iteration {upto}: {} records, manifest {}\nexport {}\n",
                manifest.total_records,
                manifest.manifest_hash,
                path.display()
            ),
            json: json!({"manifest": manifest, "export": path}),
        })
    })
}

pub fn train(cfg: &CliConfig, upto: u32) -> Result<Output, CliError> {
    let _lock = lock_store(&cfg.store)?;
    snapshot(cfg, &cfg.store.join("runs"), &format!("train-{upto}"))?;
    let loaded = Loaded::open(cfg, false)?;
    loaded.with_pipeline(cfg, |p| {
        aggregate_through(p, upto)?;
        let model = p.train(upto)?;
        Ok(Output {
            text: format!("trained {} from {} on iteration 1..={upto}\n", model.id, model.lineage.base_model),
            json: json!({"model": model}),
        })
    })
}

fn summary_line(s: &IterationSummary) -> String {
    format!(
        "k={} generator={} subset={} accepted={:.4} machine={} expert={} hard={} sft_total={} model={}\n",
        s.iteration,
        s.generator,
        s.subset_size,
        s.acceptance_rate,
        s.n_machine,
        s.n_expert,
        s.hard_cases,
        s.sft_total_records,
        s.trained_model
    )
}

pub fn run_loop(cfg: &CliConfig, iterations: u32) -> Result<Output, CliError> {
    let _lock = lock_store(&cfg.store)?;
    snapshot(cfg, &cfg.store.join("runs"), "loop")?;
    let loaded = Loaded::open(cfg, true)?;
    let summaries = loaded.with_pipeline(cfg, |p| Ok(p.run_loop(iterations)?))?;
    let rates: Vec<f64> = summaries.iter().map(|s| s.acceptance_rate).collect();
    if rates.windows(2).any(|w| w[1] < w[0]) {
        warn!(?rates, "acceptance rate fell between iterations");
    }
    let text: String = summaries.iter().map(summary_line).collect();
    Ok(Output { text, json: json!({"iterations": summaries}) })
}

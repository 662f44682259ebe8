//! Rejection sampling end to end: soundness of accepted records and
//! byte-identical results after interrupted runs.

mod common;

use std::fs::OpenOptions;
use std::io::Write;
use std::sync::atomic::AtomicU64;

use common::{scripted, Killable};
use cotloop_core::backend::Backend;
use cotloop_core::engine::{run_iteration, verify, CotDataset, EngineConfig, HardCaseQueue, IterationContext, IterationOutput};
use cotloop_core::model::{Question, RecordSource};
use cotloop_core::sft::SftStore;
use cotloop_core::synthetic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(store: &SftStore, subset: &[Question], backend: &dyn Backend, config: &EngineConfig) -> Result<IterationOutput, String> {
    let queue = HardCaseQueue::open(store.root().join("hardcases.json"));
    run_iteration(&IterationContext {
        iteration: 1,
        subset_ref: "subset-1",
        subset,
        backend,
        model_ref: "m0",
        config,
        paths: &store.iteration(1),
        queue: &queue,
    })
    .map_err(|e| e.to_string())
}

#[test]
fn machine_records_always_verify() {
    let dir = tempfile::tempdir().unwrap();
    let store = SftStore::new(dir.path());
    let qs = synthetic::corpus(500, 3);
    let backend = scripted(&qs, 0.6);
    let out = run(&store, &qs, &backend, &EngineConfig::default()).unwrap();
    let keys: std::collections::HashMap<_, _> = qs.iter().map(|q| (q.id.as_str(), q)).collect();
    let machine: Vec<_> = out.dataset.records.iter().filter(|r| r.source == RecordSource::Machine).collect();
    assert!(machine.len() > 450, "{}", machine.len());
    for r in &machine {
        assert!(verify(&r.final_answer, &keys[r.question_id.as_str()].answer_key), "{}", r.question_id);
    }
    assert_eq!(machine.len() + out.hard_cases.len(), qs.len());
}

#[test]
fn one_try_accuracy_tracks_the_script() {
    let dir = tempfile::tempdir().unwrap();
    let store = SftStore::new(dir.path());
    let qs = synthetic::corpus(500, 4);
    let backend = scripted(&qs, 0.6);
    let config = EngineConfig { max_attempts: 1, ..EngineConfig::default() };
    let out = run(&store, &qs, &backend, &config).unwrap();
    let rate = out.dataset.len() as f64 / qs.len() as f64;
    assert!((rate - 0.6).abs() < 0.07, "{rate}");
}

#[test]
fn resumed_runs_match_uninterrupted_ones() {
    let qs = synthetic::corpus(120, 9);
    let backend = scripted(&qs, 0.5);
    let config = EngineConfig { max_attempts: 4, concurrency: 4, ..EngineConfig::default() };

    let clean_dir = tempfile::tempdir().unwrap();
    let clean = SftStore::new(clean_dir.path());
    let reference = run(&clean, &qs, &backend, &config).unwrap();
    let reference_manifest = clean.aggregate(1, "m0").unwrap();
    let total_calls = backend.calls();

    for case in 0..4u64 {
        let dir = tempfile::tempdir().unwrap();
        let store = SftStore::new(dir.path());
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let mut kills: Vec<u64> = (0..3).map(|_| rng.random_range(1..total_calls / 4)).collect();
        kills.sort_unstable();
        for budget in kills {
            let killable = Killable { inner: &backend, budget, calls: AtomicU64::new(0) };
            assert!(run(&store, &qs, &killable, &config).is_err());
            // a crash can also tear the line being written
            let journal = store.iteration(1).journal();
            if journal.exists() {
                let mut f = OpenOptions::new().append(true).open(journal).unwrap();
                f.write_all(b"{\"id\":\"torn").unwrap();
            }
        }
        let resumed = run(&store, &qs, &backend, &config).unwrap();
        assert_eq!(resumed.dataset.content_hash(), reference.dataset.content_hash(), "case {case}");
        assert_eq!(resumed.dataset, reference.dataset);
        assert_eq!(CotDataset::load(&store.iteration(1)).unwrap(), reference.dataset);
        assert_eq!(resumed.hard_cases, reference.hard_cases);
        assert_eq!(store.aggregate(1, "m0").unwrap().manifest_hash, reference_manifest.manifest_hash);
    }
}

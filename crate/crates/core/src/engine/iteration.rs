//! One iteration of the bootstrapping loop over a single subset: sample with
//! the previous model, keep only verified candidates, send unsolved
//! questions to the hard-case queue, and emit the iteration's dataset.
//!
//! Progress is durable. Each status transition is appended to a journal
//! next to the checkpoint snapshot, so a killed run resumes without
//! re-sampling questions that already reached a terminal state.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use super::candidates::{generate_candidates, GenerationParams, PromptTemplate};
use super::hardcase::{FailedAttempts, HardCaseQueue, QueueError, DEFAULT_MIN_EXPERT_COT_CHARS};
use super::extract::verify;
use crate::backend::{Backend, BackendError};
use crate::io::{self, IoError};
use crate::model::{content_hash, CandidateTrace, CotRecord, Extracted, Question, RecordSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub max_attempts: u32,
    pub stop_on_first_success: bool,
    /// Keep every verified candidate instead of only the first (ablation).
    pub keep_all_verified: bool,
    #[serde(skip)]
    pub template: PromptTemplate,
    pub min_expert_cot_chars: usize,
    pub seed: u64,
    /// Worker threads; the backend policy still caps in-flight requests.
    pub concurrency: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_attempts: 8,
            stop_on_first_success: true,
            keep_all_verified: false,
            template: PromptTemplate::default(),
            min_expert_cot_chars: DEFAULT_MIN_EXPERT_COT_CHARS,
            seed: 0,
            concurrency: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum QuestionStatus {
    Pending,
    Accepted {
        record: CotRecord,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        extra: Vec<CotRecord>,
    },
    Exhausted,
    ExpertPending,
    ExpertDone {
        record: CotRecord,
    },
}

impl QuestionStatus {
    fn name(&self) -> &'static str {
        match self {
            QuestionStatus::Pending => "pending",
            QuestionStatus::Accepted { .. } => "accepted",
            QuestionStatus::Exhausted => "exhausted",
            QuestionStatus::ExpertPending => "expert_pending",
            QuestionStatus::ExpertDone { .. } => "expert_done",
        }
    }

    fn may_become(&self, next: &QuestionStatus) -> bool {
        use QuestionStatus::*;
        matches!(
            (self, next),
            (Pending, Accepted { .. }) | (Pending, Exhausted) | (Exhausted, ExpertPending) | (ExpertPending, ExpertDone { .. })
        )
    }

    pub fn is_machine_terminal(&self) -> bool {
        !matches!(self, QuestionStatus::Pending)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionProgress {
    #[serde(flatten)]
    pub status: QuestionStatus,
    pub attempts: u32,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("subset changed under checkpoint: checkpoint has {expected}, subset hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("checkpoint belongs to iteration {found}, expected {expected}")]
    IterationMismatch { expected: u32, found: u32 },
    #[error("illegal transition for {id}: {from} -> {to}")]
    IllegalTransition { id: String, from: &'static str, to: &'static str },
    #[error("question {0} appears twice in the subset")]
    DuplicateQuestion(String),
    #[error("question {0} is not part of this iteration")]
    UnknownQuestion(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Checkpointed progress of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub iteration: u32,
    pub subset_ref: String,
    pub model_ref: String,
    pub subset_hash: String,
    pub seed: u64,
    pub max_attempts: u32,
    pub statuses: BTreeMap<String, QuestionProgress>,
}

#[derive(Serialize, Deserialize)]
struct JournalEntry {
    id: String,
    #[serde(flatten)]
    progress: QuestionProgress,
}

impl IterationState {
    pub fn new(iteration: u32, subset_ref: &str, model_ref: &str, subset: &[Question], seed: u64, max_attempts: u32) -> IterationState {
        IterationState {
            iteration,
            subset_ref: subset_ref.to_string(),
            model_ref: model_ref.to_string(),
            subset_hash: content_hash(subset),
            seed,
            max_attempts,
            statuses: subset
                .iter()
                .map(|q| (q.id.clone(), QuestionProgress { status: QuestionStatus::Pending, attempts: 0 }))
                .collect(),
        }
    }

    /// Moves a question forward; backwards or skipping moves are rejected.
    pub fn advance(&mut self, id: &str, next: QuestionStatus, attempts: u32) -> Result<(), EngineError> {
        let entry = self.statuses.get_mut(id).ok_or_else(|| EngineError::UnknownQuestion(id.to_string()))?;
        if !entry.status.may_become(&next) {
            return Err(EngineError::IllegalTransition { id: id.to_string(), from: entry.status.name(), to: next.name() });
        }
        entry.status = next;
        entry.attempts = entry.attempts.max(attempts);
        Ok(())
    }

    pub fn status(&self, id: &str) -> Option<&QuestionStatus> {
        self.statuses.get(id).map(|p| &p.status)
    }

    pub fn is_complete(&self) -> bool {
        self.statuses.values().all(|p| p.status.is_machine_terminal())
    }

    fn replay(&mut self, entry: JournalEntry) {
        if let Some(p) = self.statuses.get_mut(&entry.id) {
            *p = entry.progress;
        }
    }
}

/// Files belonging to one iteration.
#[derive(Debug, Clone)]
pub struct IterationPaths {
    pub dir: PathBuf,
}

impl IterationPaths {
    pub fn new(dir: impl Into<PathBuf>) -> IterationPaths {
        IterationPaths { dir: dir.into() }
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    pub fn journal(&self) -> PathBuf {
        self.dir.join("checkpoint.journal.jsonl")
    }

    pub fn dataset(&self) -> PathBuf {
        self.dir.join("cot.jsonl")
    }

    pub fn stats(&self) -> PathBuf {
        self.dir.join("cot.stats.json")
    }

    pub fn rejects(&self) -> PathBuf {
        self.dir.join("rejects.jsonl")
    }
}

struct Checkpointer {
    paths: IterationPaths,
}

impl Checkpointer {
    fn load(&self) -> Result<Option<IterationState>, EngineError> {
        let cp = self.paths.checkpoint();
        if !cp.exists() {
            return Ok(None);
        }
        let mut state: IterationState = io::read_json_file(&cp)?;
        let journal = self.paths.journal();
        if journal.exists() {
            let raw = fs::read_to_string(&journal).map_err(|e| IoError::io(&journal, e))?;
            for line in raw.lines().filter(|l| !l.trim().is_empty()) {
                match serde_json::from_str::<JournalEntry>(line) {
                    Ok(entry) => state.replay(entry),
                    // a torn final line from a killed writer
                    Err(e) => warn!(error = %e, "ignoring unreadable journal line"),
                }
            }
        }
        Ok(Some(state))
    }

    /// Writes a full snapshot and drops the journal.
    fn snapshot(&self, state: &IterationState) -> Result<(), EngineError> {
        io::write_json_file(&self.paths.checkpoint(), state)?;
        let journal = self.paths.journal();
        if journal.exists() {
            fs::remove_file(&journal).map_err(|e| IoError::io(&journal, e))?;
        }
        Ok(())
    }

    fn record(&self, id: &str, progress: &QuestionProgress) -> Result<(), EngineError> {
        let entry = JournalEntry { id: id.to_string(), progress: progress.clone() };
        io::append_jsonl(&self.paths.journal(), &entry)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotStats {
    pub n_machine: usize,
    pub n_expert: usize,
    /// Fraction of the subset accepted from machine generation.
    pub acceptance_rate: f64,
    /// Mean attempts spent per machine-processed question.
    pub mean_attempts: f64,
}

/// Accepted records for one iteration, sorted by question id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotDataset {
    pub iteration: u32,
    pub records: Vec<CotRecord>,
    pub stats: CotStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotSidecar {
    pub iteration: u32,
    pub count: usize,
    pub content_hash: String,
    pub stats: CotStats,
}

impl CotDataset {
    pub fn new(iteration: u32, mut records: Vec<CotRecord>, stats: CotStats) -> CotDataset {
        records.sort_by(|a, b| a.question_id.cmp(&b.question_id).then(a.source.cmp(&b.source)));
        CotDataset { iteration, records, stats }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn content_hash(&self) -> String {
        io::sha256_hex(&io::to_jsonl_bytes(&self.records))
    }

    pub fn save(&self, paths: &IterationPaths) -> Result<(), IoError> {
        io::write_jsonl_file(&paths.dataset(), &self.records)?;
        let sidecar = CotSidecar {
            iteration: self.iteration,
            count: self.records.len(),
            content_hash: self.content_hash(),
            stats: self.stats.clone(),
        };
        io::write_json_file(&paths.stats(), &sidecar)
    }

    pub fn load(paths: &IterationPaths) -> Result<CotDataset, IoError> {
        let records: Vec<CotRecord> = io::read_jsonl_file(&paths.dataset())?;
        let sidecar: CotSidecar = io::read_json_file(&paths.stats())?;
        let ds = CotDataset::new(sidecar.iteration, records, sidecar.stats);
        if ds.content_hash() != sidecar.content_hash {
            return Err(IoError::integrity(&paths.dataset(), "content hash does not match sidecar"));
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub dataset: CotDataset,
    /// Questions no machine candidate solved, in subset order.
    pub hard_cases: Vec<String>,
    pub state: IterationState,
}

/// Inputs of one iteration run.
pub struct IterationContext<'a> {
    pub iteration: u32,
    pub subset_ref: &'a str,
    pub subset: &'a [Question],
    pub backend: &'a dyn Backend,
    /// Identifier of the generating model, sent as the request model.
    pub model_ref: &'a str,
    pub config: &'a EngineConfig,
    pub paths: &'a IterationPaths,
    pub queue: &'a HardCaseQueue,
}

struct Shared {
    state: IterationState,
    error: Option<EngineError>,
}

pub fn run_iteration(ctx: &IterationContext<'_>) -> Result<IterationOutput, EngineError> {
    let mut seen = HashSet::new();
    for q in ctx.subset {
        if !seen.insert(q.id.as_str()) {
            return Err(EngineError::DuplicateQuestion(q.id.clone()));
        }
    }
    let cp = Checkpointer { paths: ctx.paths.clone() };
    let subset_hash = content_hash(ctx.subset);
    let state = match cp.load()? {
        Some(state) => {
            if state.iteration != ctx.iteration {
                return Err(EngineError::IterationMismatch { expected: ctx.iteration, found: state.iteration });
            }
            if state.subset_hash != subset_hash {
                return Err(EngineError::ChecksumMismatch { expected: state.subset_hash, actual: subset_hash });
            }
            if state.model_ref != ctx.model_ref && !state.is_complete() {
                warn!(checkpoint = %state.model_ref, now = %ctx.model_ref, "resuming with a different model");
            }
            info!(iteration = ctx.iteration, "resuming from checkpoint");
            state
        }
        None => {
            let state = IterationState::new(
                ctx.iteration,
                ctx.subset_ref,
                ctx.model_ref,
                ctx.subset,
                ctx.config.seed,
                ctx.config.max_attempts,
            );
            cp.snapshot(&state)?;
            state
        }
    };

    let pending: Vec<&Question> = ctx
        .subset
        .iter()
        .filter(|q| matches!(state.status(&q.id), Some(QuestionStatus::Pending)))
        .collect();
    let params = GenerationParams {
        model: ctx.model_ref,
        max_attempts: state.max_attempts,
        stop_on_first_success: ctx.config.stop_on_first_success && !ctx.config.keep_all_verified,
        template: &ctx.config.template,
        seed: state.seed,
    };
    debug!(iteration = ctx.iteration, pending = pending.len(), "sampling");

    let shared = Mutex::new(Shared { state, error: None });
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = ctx.config.concurrency.clamp(1, pending.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(q) = pending.get(i) else { break };
                let result = generate_candidates(q, ctx.backend, &params)
                    .map_err(EngineError::from)
                    .and_then(|traces| {
                        let mut guard = shared.lock().expect("state lock");
                        settle(&mut guard.state, q, traces, ctx, &cp)
                    });
                if let Err(e) = result {
                    failed.store(true, Ordering::SeqCst);
                    let mut guard = shared.lock().expect("state lock");
                    guard.error.get_or_insert(e);
                    break;
                }
            });
        }
    });
    let Shared { mut state, error } = shared.into_inner().expect("state lock");
    if let Some(e) = error {
        return Err(e);
    }

    // Exhausted leftovers from an interrupted run still need queueing.
    for q in ctx.subset {
        if matches!(state.status(&q.id), Some(QuestionStatus::Exhausted)) {
            let attempts = state.statuses[&q.id].attempts;
            let failed = FailedAttempts { attempts, sample_rejected_cot: None, sample_rejected_answer: None };
            ctx.queue.enqueue(q, ctx.iteration, failed)?;
            state.advance(&q.id, QuestionStatus::ExpertPending, attempts)?;
            cp.record(&q.id, &state.statuses[&q.id])?;
        }
    }
    let resolved = ctx.queue.resolved(ctx.iteration)?;
    for q in ctx.subset {
        if matches!(state.status(&q.id), Some(QuestionStatus::ExpertPending)) {
            if let Some(record) = resolved.get(&q.id) {
                let attempts = state.statuses[&q.id].attempts;
                state.advance(&q.id, QuestionStatus::ExpertDone { record: record.clone() }, attempts)?;
                cp.record(&q.id, &state.statuses[&q.id])?;
            }
        }
    }
    cp.snapshot(&state)?;

    let (dataset, hard_cases) = collect(&state, ctx.subset);
    dataset.save(ctx.paths)?;
    info!(
        iteration = ctx.iteration,
        records = dataset.len(),
        hard_cases = hard_cases.len(),
        acceptance = dataset.stats.acceptance_rate,
        "iteration complete"
    );
    Ok(IterationOutput { dataset, hard_cases, state })
}

/// Applies one question's sampling result: accept the first verified
/// candidate, or mark the question exhausted and queue it for experts.
fn settle(
    state: &mut IterationState,
    q: &Question,
    traces: Vec<CandidateTrace>,
    ctx: &IterationContext<'_>,
    cp: &Checkpointer,
) -> Result<(), EngineError> {
    let attempts = traces.len() as u32;
    let mut verified = traces.iter().filter(|t| t.verified).map(|t| machine_record(q, t, ctx.iteration));
    if let Some(record) = verified.next() {
        let extra = if ctx.config.keep_all_verified { verified.collect() } else { Vec::new() };
        state.advance(&q.id, QuestionStatus::Accepted { record, extra }, attempts)?;
        cp.record(&q.id, &state.statuses[&q.id])?;
    } else {
        state.advance(&q.id, QuestionStatus::Exhausted, attempts)?;
        cp.record(&q.id, &state.statuses[&q.id])?;
        let sample = traces.iter().find(|t| !t.chain_of_thought.is_empty()).or(traces.first());
        let failed = FailedAttempts {
            attempts,
            sample_rejected_cot: sample.map(|t| truncate(&t.chain_of_thought, 2000)),
            sample_rejected_answer: sample.and_then(|t| t.extracted_answer.answer().map(|a| a.to_string())),
        };
        ctx.queue.enqueue(q, ctx.iteration, failed)?;
        state.advance(&q.id, QuestionStatus::ExpertPending, attempts)?;
        cp.record(&q.id, &state.statuses[&q.id])?;
    }
    for t in traces.iter().filter(|t| !t.verified) {
        io::append_jsonl(&ctx.paths.rejects(), t)?;
    }
    Ok(())
}

fn machine_record(q: &Question, t: &CandidateTrace, iteration: u32) -> CotRecord {
    let Extracted::Answer(answer) = &t.extracted_answer else {
        unreachable!("verified traces carry an answer")
    };
    debug_assert!(verify(answer, &q.answer_key));
    CotRecord {
        question_id: q.id.clone(),
        chain_of_thought: t.chain_of_thought.clone(),
        final_answer: answer.clone(),
        source: RecordSource::Machine,
        iteration,
        created_by: t.backend_model.clone(),
    }
}

fn truncate(s: &str, max_chars: usize) -> String {
    s.chars().take(max_chars).collect()
}

fn collect(state: &IterationState, subset: &[Question]) -> (CotDataset, Vec<String>) {
    let mut records = Vec::new();
    let mut hard = Vec::new();
    let (mut n_machine, mut n_expert, mut accepted_questions) = (0, 0, 0);
    let (mut attempt_sum, mut processed) = (0u64, 0u64);
    for q in subset {
        let p = &state.statuses[&q.id];
        if p.status.is_machine_terminal() {
            attempt_sum += u64::from(p.attempts);
            processed += 1;
        }
        match &p.status {
            QuestionStatus::Accepted { record, extra } => {
                accepted_questions += 1;
                n_machine += 1 + extra.len();
                records.push(record.clone());
                records.extend(extra.iter().cloned());
            }
            QuestionStatus::ExpertDone { record } => {
                n_expert += 1;
                hard.push(q.id.clone());
                records.push(record.clone());
            }
            QuestionStatus::Exhausted | QuestionStatus::ExpertPending => hard.push(q.id.clone()),
            QuestionStatus::Pending => {}
        }
    }
    let stats = CotStats {
        n_machine,
        n_expert,
        acceptance_rate: if subset.is_empty() { 0.0 } else { accepted_questions as f64 / subset.len() as f64 },
        mean_attempts: if processed == 0 { 0.0 } else { attempt_sum as f64 / processed as f64 },
    };
    (CotDataset::new(state.iteration, records, stats), hard)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{KeyIndex, Outcome, ScriptedBackend};
    use crate::engine::hardcase::Annotation;
    use crate::synthetic;

    struct Fixture {
        _dir: tempfile::TempDir,
        paths: IterationPaths,
        queue: HardCaseQueue,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let paths = IterationPaths::new(dir.path().join("iter-1"));
        let queue = HardCaseQueue::open(dir.path().join("hardcases.json"));
        Fixture { _dir: dir, paths, queue }
    }

    /// Correct for every question except those whose id is in `fail`.
    fn selective(qs: &[Question], fail: &[&str]) -> ScriptedBackend {
        let keys = KeyIndex::new(qs.to_vec());
        let fail: HashSet<String> = fail.iter().map(|s| s.to_string()).collect();
        ScriptedBackend::from_fn("m0", move |req, _| {
            let q = keys.lookup(&req.user_text()).expect("known question");
            if fail.contains(&q.id) {
                Outcome::Text("reasoning\nAnswer: Z".into())
            } else {
                Outcome::Text(format!("reasoning about {}\nAnswer: {}", q.id, q.answer_key))
            }
        })
    }

    fn run(f: &Fixture, subset: &[Question], backend: &dyn Backend, config: &EngineConfig) -> Result<IterationOutput, EngineError> {
        run_iteration(&IterationContext {
            iteration: 1,
            subset_ref: "subset-1",
            subset,
            backend,
            model_ref: "m0",
            config,
            paths: &f.paths,
            queue: &f.queue,
        })
    }

    #[test]
    fn three_of_four_accepted() {
        let f = fixture();
        let qs = synthetic::corpus(4, 8);
        let backend = selective(&qs, &[&qs[2].id]);
        let out = run(&f, &qs, &backend, &EngineConfig::default()).unwrap();
        assert_eq!(out.dataset.len(), 3);
        assert_eq!(out.hard_cases, vec![qs[2].id.clone()]);
        assert_eq!(out.dataset.stats.n_machine, 3);
        assert_eq!(out.dataset.stats.acceptance_rate, 0.75);
        assert_eq!(out.dataset.stats.mean_attempts, (1.0 + 1.0 + 8.0 + 1.0) / 4.0);
        assert_eq!(f.queue.list(None).unwrap().len(), 1);
        assert!(matches!(out.state.status(&qs[2].id), Some(QuestionStatus::ExpertPending)));
        for r in &out.dataset.records {
            let q = qs.iter().find(|q| q.id == r.question_id).unwrap();
            assert!(verify(&r.final_answer, &q.answer_key));
            assert!(!r.chain_of_thought.is_empty());
        }
        assert_eq!(CotDataset::load(&f.paths).unwrap(), out.dataset);
    }

    #[test]
    fn empty_subset() {
        let f = fixture();
        let backend = ScriptedBackend::fixed("m0", "x");
        let out = run(&f, &[], &backend, &EngineConfig::default()).unwrap();
        assert!(out.dataset.is_empty());
        assert!(out.hard_cases.is_empty());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn expert_records_join_the_same_iteration() {
        let f = fixture();
        let qs = synthetic::corpus(3, 2);
        let backend = selective(&qs, &[&qs[0].id]);
        run(&f, &qs, &backend, &EngineConfig::default()).unwrap();
        let annotation = Annotation {
            chain_of_thought: "Expert reasoning that walks through each option carefully and explains.".into(),
            final_answer: qs[0].answer_key.to_string(),
            annotator: "expert-7".into(),
        };
        f.queue.annotate(&qs[0].id, &annotation, 50).unwrap();
        let calls_before = backend.calls();
        let out = run(&f, &qs, &backend, &EngineConfig::default()).unwrap();
        assert_eq!(backend.calls(), calls_before, "finished questions are not resampled");
        assert_eq!(out.dataset.len(), 3);
        assert_eq!(out.dataset.stats.n_expert, 1);
        let expert = out.dataset.records.iter().find(|r| r.source == RecordSource::Expert).unwrap();
        assert_eq!((expert.iteration, expert.created_by.as_str()), (1, "expert-7"));
    }

    #[test]
    fn changed_subset_is_rejected() {
        let f = fixture();
        let qs = synthetic::corpus(5, 1);
        let backend = selective(&qs, &[]);
        run(&f, &qs[..4], &backend, &EngineConfig::default()).unwrap();
        assert!(matches!(run(&f, &qs, &backend, &EngineConfig::default()), Err(EngineError::ChecksumMismatch { .. })));
    }

    #[test]
    fn backend_failure_leaves_resumable_checkpoint() {
        let f = fixture();
        let qs = synthetic::corpus(6, 3);
        let keys = KeyIndex::new(qs.clone());
        let flaky = ScriptedBackend::from_fn("m0", move |req, call| {
            if call >= 3 {
                return Outcome::AuthError;
            }
            let q = keys.lookup(&req.user_text()).unwrap();
            Outcome::Text(format!("ok\nAnswer: {}", q.answer_key))
        });
        let config = EngineConfig { concurrency: 1, ..EngineConfig::default() };
        assert!(matches!(run(&f, &qs, &flaky, &config), Err(EngineError::Backend(_))));
        let good = selective(&qs, &[]);
        let out = run(&f, &qs, &good, &config).unwrap();
        assert_eq!(out.dataset.len(), 6);
        assert_eq!(good.calls(), 3, "the three accepted questions are not repeated");
    }

    #[test]
    fn keep_all_verified_records_every_success() {
        let f = fixture();
        let qs = synthetic::corpus(2, 5);
        let backend = selective(&qs, &[]);
        let config = EngineConfig { keep_all_verified: true, max_attempts: 3, ..EngineConfig::default() };
        let out = run(&f, &qs, &backend, &config).unwrap();
        assert_eq!(out.dataset.len(), 6);
        assert_eq!(out.dataset.stats.acceptance_rate, 1.0);
    }

    #[test]
    fn transitions_only_move_forward() {
        let qs = synthetic::corpus(1, 1);
        let mut s = IterationState::new(1, "s", "m", &qs, 0, 8);
        let id = qs[0].id.clone();
        assert!(s.advance(&id, QuestionStatus::ExpertPending, 0).is_err());
        s.advance(&id, QuestionStatus::Exhausted, 8).unwrap();
        assert!(s.advance(&id, QuestionStatus::Pending, 0).is_err());
        s.advance(&id, QuestionStatus::ExpertPending, 8).unwrap();
        assert!(s.advance(&id, QuestionStatus::Exhausted, 8).is_err());
        assert!(matches!(s.advance("missing", QuestionStatus::Exhausted, 1), Err(EngineError::UnknownQuestion(_))));
    }

    #[test]
    fn torn_journal_line_is_ignored() {
        let f = fixture();
        let qs = synthetic::corpus(2, 9);
        let state = IterationState::new(1, "s", "m0", &qs, 0, 8);
        let cp = Checkpointer { paths: f.paths.clone() };
        cp.snapshot(&state).unwrap();
        let mut s2 = state.clone();
        s2.advance(&qs[0].id, QuestionStatus::Exhausted, 8).unwrap();
        cp.record(&qs[0].id, &s2.statuses[&qs[0].id]).unwrap();
        let mut raw = fs::read_to_string(f.paths.journal()).unwrap();
        raw.push_str("{\"id\":\"trunc");
        fs::write(f.paths.journal(), raw).unwrap();
        let loaded = cp.load().unwrap().unwrap();
        assert_eq!(loaded.status(&qs[0].id), Some(&QuestionStatus::Exhausted));
        assert_eq!(loaded.status(&qs[1].id), Some(&QuestionStatus::Pending));
    }
}

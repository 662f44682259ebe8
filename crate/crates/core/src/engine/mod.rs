//! Rejection-sampling engine: candidate generation, answer extraction and
//! verification, per-iteration runs, and the expert hard-case queue.

mod candidates;
mod extract;
mod hardcase;
mod iteration;

pub use candidates::{generate_candidates, GenerationParams, PromptTemplate};
pub use extract::{extract_answer, split_response, verify, Extraction, ExtractionFailed, Rule};
pub use hardcase::{
    admit_expert_record, AdmitError, Annotation, CaseStatus, FailedAttempts, HardCase, HardCaseQueue, QueueError,
    DEFAULT_MIN_EXPERT_COT_CHARS,
};
pub use iteration::{
    run_iteration, CotDataset, CotSidecar, CotStats, EngineConfig, EngineError, IterationContext, IterationOutput,
    IterationPaths, IterationState, QuestionProgress, QuestionStatus,
};

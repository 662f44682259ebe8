//! Building a clean QA dataset from raw sources.

mod dedup;
mod filter;
mod segment;
mod synth;
mod triage;

pub use dedup::{dedup, similarity, stem_key, DedupOutcome, Dropped, DEFAULT_THRESHOLD};
pub use filter::{filter_malformed, FilterOutcome, FilterPolicy, RawItem, RawOption, RejectReason, SourceKind};
pub use segment::{body_text, segment_textbook, HeadingGrammar, LineFilter, SegmentError, TextSegment};
pub use synth::{synthesize_qa, SynthError, SynthOutcome, SynthParams, SynthTemplate};
pub use triage::{triage_by_model, TriageOutcome, TriageParams, TriageResult};

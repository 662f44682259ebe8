//! Core of the verified chain-of-thought pipeline: corpus model, ingestion,
//! partitioning, model backends, the rejection-sampling engine, the SFT
//! store and exam evaluation.

pub mod backend;
pub mod engine;
pub mod eval;
pub mod io;
pub mod ingest;
pub mod model;
pub mod par;
pub mod partition;
pub mod pipeline;
pub mod sft;
pub mod synthetic;

use cotloop_core::backend::{BackendError, ConfigError};
use cotloop_core::engine::{EngineError, QueueError};
use cotloop_core::eval::EvalError;
use cotloop_core::io::IoError;
use cotloop_core::partition::PartitionError;
use cotloop_core::pipeline::PipelineError;
use cotloop_core::sft::SftError;
use serde_json::json;

/// Error classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Backend(String),
    /// Trainer failures and out-of-order pipeline steps.
    Trainer(String),
    Checksum(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Trainer(_) => 4,
            CliError::Checksum(_) => 5,
            CliError::Other(_) => 1,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Backend(_) => "backend",
            CliError::Trainer(_) => "trainer",
            CliError::Checksum(_) => "checksum",
            CliError::Other(_) => "other",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Backend(m) | CliError::Trainer(m) | CliError::Checksum(m) | CliError::Other(m) => m,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({"error": {"class": self.class(), "exit_code": self.exit_code(), "message": self.message()}})
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} error: {}", self.class(), self.message())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if matches!(e, IoError::Integrity { .. }) {
            CliError::Checksum(e.to_string())
        } else {
            CliError::Other(e.to_string())
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(io) => io.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<QueueError> for CliError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::Io(io) => io.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<PartitionError> for CliError {
    fn from(e: PartitionError) -> Self {
        match e {
            PartitionError::DatasetMismatch { .. } => CliError::Checksum(e.to_string()),
            PartitionError::KExceedsDatasetSize { .. } | PartitionError::InvalidPlan(_) => CliError::Config(e.to_string()),
            PartitionError::Io(io) => io.into(),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::ChecksumMismatch { .. } | EngineError::IterationMismatch { .. } => CliError::Checksum(e.to_string()),
            EngineError::Backend(b) => b.into(),
            EngineError::Queue(q) => q.into(),
            EngineError::Io(io) => io.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<SftError> for CliError {
    fn from(e: SftError) -> Self {
        match e {
            SftError::TrainerFailed(_) | SftError::TrainerTimeout(_) | SftError::IterationGap { .. } => {
                CliError::Trainer(e.to_string())
            }
            SftError::MissingConstituent(_) => CliError::Checksum(e.to_string()),
            SftError::Io(io) => io.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::IterationGap { .. } => CliError::Trainer(e.to_string()),
            PipelineError::OutOfRange { .. } => CliError::Config(e.to_string()),
            PipelineError::Backend(m) => CliError::Backend(m),
            PipelineError::Engine(e) => e.into(),
            PipelineError::Sft(e) => e.into(),
            PipelineError::Partition(e) => e.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Backend(b) => b.into(),
            EvalError::Io(io) => io.into(),
            EvalError::RunMismatch(_) => CliError::Checksum(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let all = [
            CliError::Config(String::new()),
            CliError::Backend(String::new()),
            CliError::Trainer(String::new()),
            CliError::Checksum(String::new()),
            CliError::Other(String::new()),
        ];
        let codes: std::collections::BTreeSet<u8> = all.iter().map(CliError::exit_code).collect();
        assert_eq!(codes.len(), all.len());
        assert!(!codes.contains(&0));
    }

    #[test]
    fn gap_exits_four() {
        let e: CliError = PipelineError::IterationGap { k: 2, missing: "x".into() }.into();
        assert_eq!(e.exit_code(), 4);
        let e: CliError = IoError::integrity(std::path::Path::new("f"), "content hash does not match sidecar").into();
        assert_eq!(e.exit_code(), 5);
    }
}

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped roughly by layer: numeric shape/parameter errors,
/// distribution-table errors from the discrete oracles, pipeline artifact
/// errors, and io/parse failures.
#[derive(Debug, Error)]
pub enum CmibError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable sets overlap on `{0}`")]
    OverlappingVariables(String),

    #[error("infinite divergence: {0}")]
    InfiniteDivergence(String),

    #[error("markov violation: {0}")]
    MarkovViolation(String),

    #[error("duplicate skill id `{0}`")]
    DuplicateSkillId(String),

    #[error("non-finite loss at step {step} (batch item {item})")]
    NonFiniteLoss { step: usize, item: usize },

    #[error("model checksum changed: expected {expected}, got {got}")]
    ChecksumMismatch { expected: String, got: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("config hash mismatch in {artifact}: found {found}, expected {expected}")]
    HashMismatch {
        artifact: String,
        found: String,
        expected: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CmibError>,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CmibError {
    pub fn invalid_parameter(name: impl Into<String>, reason: impl Into<String>) -> Self {
        CmibError::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        CmibError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CmibError>;

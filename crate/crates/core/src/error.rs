use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("node index {index} out of range for graph with {nodes} nodes")]
    NodeOutOfRange { index: usize, nodes: usize },

    #[error("edge label {label} out of range (valid labels are 1..={max})")]
    LabelOutOfRange { label: usize, max: usize },

    #[error("edge ({i}, {j}) already present")]
    EdgeExists { i: usize, j: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid omega matrix: {0}")]
    InvalidOmega(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("posterior denominator vanished (class {class} unreachable at step {step})")]
    ZeroPosteriorMass { class: usize, step: usize },

    #[error("constraint violated: {0}")]
    ConstraintViolated(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("failed to read {path}: {reason}")]
    FileRead { path: PathBuf, reason: String },

    #[error("failed to write {path}: {reason}")]
    FileWrite { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

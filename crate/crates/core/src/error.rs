use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm below 1e-12, cannot normalize")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid label {label} (class count {num_classes})")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("invalid pair weight {value} at ({row}, {col}); weights must be positive and finite")]
    InvalidWeights { row: usize, col: usize, value: f64 },

    #[error("class {class} has no learned-state statistics yet")]
    InactiveState { class: usize },

    #[error("sample count for class {class} went backwards ({old} -> {new})")]
    NonMonotoneCount { class: usize, old: u64, new: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical divergence at epoch {epoch}, step {step}: {detail}")]
    NumericalDivergence { epoch: usize, step: u64, detail: String },

    #[error("could not separate {classes} class means in {dim} dimensions")]
    InfeasibleSeparation { classes: usize, dim: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

/// Errors raised by the operators and the experiment pipelines.
#[derive(Debug, Error)]
pub enum FlagError {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("shape mismatch: expected {expected} samples, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("lattice mismatch between operands")]
    LatticeMismatch,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("unsupported exponent p = {0}")]
    UnsupportedExponent(f64),
    #[error("scale must be positive, got t = {t}, s = {s}")]
    NonPositiveScale { t: f64, s: f64 },
    #[error("invalid scale grid: {0}")]
    InvalidScaleGrid(String),
    #[error("kernel mismatch: {0}")]
    KernelMismatch(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("insufficient t_max: {0}")]
    InsufficientTMax(String),
    #[error("invalid level range: l_min = {min} > l_max = {max}")]
    InvalidLevelRange { min: i32, max: i32 },
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("invalid rectangle: {0}")]
    InvalidRectangle(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FlagError>;

use thiserror::Error;

/// Errors raised by the fitting, selection and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular design: normal equations are rank-deficient")]
    SingularDesign,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("response has zero variance")]
    ConstantResponse,
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),
    #[error("component {component} collapsed (total responsibility {mass:.3})")]
    DegenerateComponent { component: usize, mass: f64 },
    #[error("component {component} has {size} samples, below the minimum of {min}")]
    EmptyComponent { component: usize, size: usize, min: usize },
    #[error("initialization failed after {attempts} attempts")]
    InitFailure { attempts: usize },
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("no candidate K produced enough successful fits: {0}")]
    SelectionFailed(String),
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced by panel construction, estimation, selection and forecasting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("gram matrix of series {series} is not positive definite")]
    NotPositiveDefinite { series: usize },

    /// The panel has numerical rank below the requested number of factors.
    /// `component` is the 1-based index of the first vanishing eigenvalue.
    #[error("panel is rank deficient: eigenvalue {component} is numerically zero")]
    RankDeficient { component: usize },

    #[error("true loadings have a singular gram matrix")]
    SingularLoadings,

    #[error("least-squares design is collinear: {0}")]
    Collinear(String),

    #[error("series too short: need at least {required} observations, got {actual}")]
    SeriesTooShort { required: usize, actual: usize },

    #[error("mortality data: {0}")]
    Mortality(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::RankDeficient { .. }
            | Error::SingularLoadings
            | Error::Collinear(_)
            | Error::NotPositiveDefinite { .. } => 3,
            Error::Io(_) => 4,
            Error::Csv(e) if e.is_io_error() => 4,
            Error::Json(e) if e.is_io() => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

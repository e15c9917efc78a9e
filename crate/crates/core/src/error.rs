use thiserror::Error;

pub type Result<T> = std::result::Result<T, HdivError>;

#[derive(Debug, Error)]
pub enum HdivError {
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("instrument `{0}` has an all-zero column")]
    DegenerateInstrument(String),

    #[error("column `{0}` has zero sample variance")]
    ZeroVariance(String),

    #[error("lasso path error: {0}")]
    LassoPath(String),

    #[error("lasso fit for {problem} did not converge at lambda = {lambda:e}")]
    LassoNotConverged { problem: String, lambda: f64 },

    #[error("CLIME linear program failed for column {column}: {message}")]
    Solver { column: usize, message: String },

    #[error("weak instruments: debiased quadratic form of gamma is {q_hat:e} (must be positive)")]
    WeakInstruments { q_hat: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

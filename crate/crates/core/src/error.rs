use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} outside of the range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("marginal has no associated orthonormal polynomial family: {0}")]
    UnsupportedMarginal(String),

    #[error("underdetermined system: {rows} samples for {cols} unknowns")]
    Underdetermined { rows: usize, cols: usize },

    #[error("integration blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("forecast diverged at step {step} (|y| = {value:e})")]
    Diverged { step: usize, value: f64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("undefined quantity `{0}`")]
    UndefinedQuantity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed table {path}: {msg}")]
    Table { path: String, msg: String },
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

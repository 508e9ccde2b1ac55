use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("labels contain a single class only")]
    SingleClass,

    #[error("all labeled pairs carry the same label")]
    AllOneClass,

    #[error("non-finite value in input at row {row}")]
    NonFinite { row: usize },

    #[error("training did not converge: accuracy {accuracy:.4} below required {required:.4}")]
    NonConvergence { accuracy: f64, required: f64 },

    #[error("identity sets overlap: {0}")]
    ClassOverlap(String),

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("every mixture restart collapsed to a degenerate component")]
    DegenerateComponent,

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

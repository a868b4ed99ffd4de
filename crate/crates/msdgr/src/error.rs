use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate ({i}, {j}) outside valid rectangle [0, {max_i}] x [0, {max_j}]")]
    OutOfBounds {
        i: f64,
        j: f64,
        max_i: f64,
        max_j: f64,
    },

    #[error("shape mismatch at layer `{layer}`: {detail}")]
    ShapeMismatch { layer: String, detail: String },

    #[error("missing weights: {0}")]
    MissingWeights(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("empty match: every node pair was removed at every scale")]
    EmptyMatch,

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("container error: {0}")]
    Container(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    ///
    /// 1 = usage, 2 = data, 3 = verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Verification(_) => 3,
            Error::Parameter(_) | Error::Infeasible(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

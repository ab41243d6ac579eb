use thiserror::Error;

/// Errors raised by the library and surfaced by the `mae` binary.
#[derive(Debug, Error)]
pub enum MaeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed model document: {0}")]
    Malformed(String),

    #[error("unsupported model format version {0} (expected 1)")]
    UnsupportedVersion(u64),

    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error(
        "diversity parameter lambda = {lambda} is outside [0, M/(M-1)) = [0, {bound}) for M = {modules}"
    )]
    InvalidLambda {
        lambda: f64,
        bound: f64,
        modules: usize,
    },

    #[error(
        "data covariance X X^T is rank deficient (smallest/largest eigenvalue = {ratio:.3e}); \
         add a small jitter to the data or reduce the feature dimension"
    )]
    RankDeficient { ratio: f64 },

    #[error("matrix is singular or ill-conditioned: {0}")]
    Singular(String),

    #[error("symmetric eigensolver failed to converge on a {0}x{0} matrix")]
    EigenFailure(usize),

    #[error("gradient descent diverged: {0}")]
    Divergence(String),

    #[error("inconclusive witness: {0}")]
    InconclusiveWitness(String),

    #[error("training labels contain a single class ({0}); at least two are required")]
    SingleClass(i64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MaeError {
    /// Process exit code used by the CLI: 3 for data/validation problems,
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            MaeError::Singular(_)
            | MaeError::EigenFailure(_)
            | MaeError::Divergence(_)
            | MaeError::InconclusiveWitness(_) => 4,
            _ => 3,
        }
    }

    pub(crate) fn shape(context: &str, expected: impl ToString, found: impl ToString) -> Self {
        MaeError::Shape {
            context: context.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MaeError>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A matrix does not have the shape implied by the other inputs.
    #[error("dimension mismatch in {matrix}: expected {expected}, found {found}")]
    Dimension {
        matrix: String,
        expected: String,
        found: String,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("pencil singular everywhere: the system pencil has no finite full-rank point")]
    PencilSingular,

    #[error("no stabilizing gain found (best spectral radius {best_radius:.6})")]
    NoStabilizingGain { best_radius: f64 },

    #[error("closed-loop error dynamics are not Schur stable (spectral radius {radius:.6})")]
    Unstable { radius: f64 },

    /// The least-squares problem has no unique minimizer.
    #[error("non-identifiable: solution set is an affine subspace of dimension {dimension}")]
    NonIdentifiable { dimension: usize },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("invalid covariance {name}: {reason}")]
    Covariance { name: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dim(matrix: &str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::Dimension {
            matrix: matrix.to_string(),
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

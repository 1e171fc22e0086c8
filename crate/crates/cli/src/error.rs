use thiserror::Error;

/// Stage failures, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("not strongly detectable: {0}")]
    NotStronglyDetectable(String),
    #[error("no stabilizing gain: {0}")]
    NoGain(String),
    #[error("solver failed: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 1,
            CliError::Validation(_) => 2,
            CliError::NotStronglyDetectable(_) => 3,
            CliError::NoGain(_) => 4,
            CliError::Solver(_) => 5,
        }
    }
}

impl From<uials::Error> for CliError {
    fn from(e: uials::Error) -> Self {
        use uials::Error as E;
        let msg = e.to_string();
        match e {
            E::Parse(_) | E::Io(_) => CliError::Parse(msg),
            E::Dimension { .. } | E::Covariance { .. } | E::Degenerate(_) => {
                CliError::Validation(msg)
            }
            E::PencilSingular => CliError::NotStronglyDetectable(msg),
            E::NoStabilizingGain { .. } | E::Unstable { .. } => CliError::NoGain(msg),
            E::NonIdentifiable { .. }
            | E::InsufficientData { .. }
            | E::NotApplicable(_)
            | E::Infeasible(_)
            | E::Factorization(_) => CliError::Solver(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Parse(format!("io: {e}"))
    }
}

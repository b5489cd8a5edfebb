use thiserror::Error;

/// Errors surfaced by the library.
///
/// `Input` maps to CLI exit code 2, `Infeasible` to exit code 3 and
/// `TestFailure` to exit code 4 under `--strict`.
#[derive(Debug, Error)]
pub enum NsiError {
    #[error("input error: {0}")]
    Input(String),

    #[error("estimation infeasible: {0}")]
    Infeasible(String),

    #[error("validity test failed: {0}")]
    TestFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl NsiError {
    pub fn input(msg: impl Into<String>) -> Self {
        NsiError::Input(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        NsiError::Infeasible(msg.into())
    }

    /// CLI exit code associated with this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            NsiError::Input(_) | NsiError::Io(_) | NsiError::Csv(_) => 2,
            NsiError::Infeasible(_) => 3,
            NsiError::TestFailure(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, NsiError>;

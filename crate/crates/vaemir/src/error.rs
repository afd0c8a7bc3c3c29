use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong length for the operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    /// A configuration value was out of range or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// The input data violated a structural requirement.
    #[error("data error: {0}")]
    Data(String),

    /// Training or scoring produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

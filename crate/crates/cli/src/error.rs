use thiserror::Error;

use uniform_delta::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DOMAIN: i32 = 3;
    pub const ASSERTION: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("assertion failed: {0}")]
    Assertion(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => exit::CONFIG,
            CliError::Core(e) => core_exit_code(e),
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => exit::IO,
            CliError::Assertion(_) => exit::ASSERTION,
        }
    }
}

/// Domain-type failures map to 3, malformed requests to 2.
pub fn core_exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Domain { .. }
        | CoreError::Rank { .. }
        | CoreError::Degenerate { .. }
        | CoreError::SingularHessian { .. }
        | CoreError::NotPsd { .. }
        | CoreError::OptimFail(_) => exit::DOMAIN,
        _ => exit::CONFIG,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

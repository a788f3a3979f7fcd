use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point {point:?} is outside the domain of `{phi}`")]
    Domain { phi: String, point: Vec<f64> },

    #[error("jacobian row {row} has norm {norm:e}, below the rank floor")]
    Rank { row: usize, norm: f64 },

    #[error("degenerate pair: |t - m| = {distance:e}")]
    Degenerate { distance: f64 },

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },

    #[error("function `{name}` takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown built-in `{0}`")]
    UnknownBuiltin(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("optimization failed: {0}")]
    OptimFail(String),

    #[error("singular hessian: |d2e/dx2| = {value:e}")]
    SingularHessian { value: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn domain(phi: &str, point: &[f64]) -> Self {
        Error::Domain {
            phi: phi.to_string(),
            point: point.to_vec(),
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("fiber {fiber} shifted by {shift} leaves the orbit window")]
    WindowExceeded { fiber: usize, shift: i64 },

    #[error("fiber {fiber}, branch {branch}: {msg}")]
    Branch { fiber: usize, branch: usize, msg: String },

    #[error("potential on fiber {fiber} is not summable: {msg}")]
    NotSummable { fiber: usize, msg: String },

    #[error("{what} did not converge after {iterations} iterations (last change {last:e})")]
    NonConvergence { what: String, iterations: usize, last: f64 },

    #[error("fully escaping system: leading eigenvalue vanishes on fiber {0}")]
    ZeroEigenvalue(usize),

    #[error("empty operator support on fiber {fiber} at depth {depth}")]
    EmptySupport { fiber: usize, depth: usize },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Invalid(_) | Error::NotSummable { .. } | Error::Io(_) => 1,
            Error::Json(_) => 2,
            Error::NonConvergence { .. } | Error::ZeroEigenvalue(_) => 3,
            Error::WindowExceeded { .. }
            | Error::Branch { .. }
            | Error::EmptySupport { .. }
            | Error::Invariant(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

use std::path::PathBuf;

/// Failures split by who has to act: bad input versus a run that broke.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] anm_core::Error),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Input { path: path.into(), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for input problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input { .. } | Error::Argument(_) | Error::Io { .. } => EXIT_INPUT,
            Error::Core(e) => match e {
                anm_core::Error::InfeasibleAction(_) | anm_core::Error::InconsistentProblem(_) => EXIT_RUNTIME,
                _ => EXIT_INPUT,
            },
            Error::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("duplicate link between buses {from} and {to}")]
    DuplicateLink { from: usize, to: usize },
    #[error("invalid device: {0}")]
    InvalidDevice(String),
    #[error("insufficient data: {rows} rows, at least {required} required")]
    InsufficientData { rows: usize, required: usize },
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
    #[error("inconsistent lookahead problem: {0}")]
    InconsistentProblem(String),
    #[error("invalid instance spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

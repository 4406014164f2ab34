use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("client index {index} out of range for {clients} clients")]
    ClientOutOfRange { index: usize, clients: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible synthetic problem: {0}")]
    InfeasibleProblem(String),
    #[error("csv error at {path}: {message}")]
    Csv { path: String, message: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("run diverged at step {step}")]
    Diverged { step: usize },
    #[error("no finite privacy budget: {0}")]
    NoFiniteBudget(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite: leading minor of order {minor} is not positive")]
    NotPsd { minor: usize },

    #[error("constraint build error: {0}")]
    ConstraintBuild(String),

    #[error("model build error: {0}")]
    Build(String),

    #[error("instance too large for exhaustive enumeration: {0}")]
    Size(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

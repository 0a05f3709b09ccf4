use thiserror::Error;

/// Errors surfaced by loading, estimation, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("singular design: {0}")]
    Singular(String),

    #[error("overlap violation: treated y_pre levels without control support: {0:?}")]
    Overlap(Vec<i64>),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI contract: 2 for data problems,
    /// 3 for estimation/inference failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) | Error::Io(_) => 2,
            Error::Estimation(_) | Error::Singular(_) | Error::Overlap(_) | Error::Inference(_) => {
                3
            }
        }
    }
}

use thiserror::Error;

/// Errors produced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Calibration data violates a geometric invariant (degenerate or
    /// non-orthonormal transform, bad intrinsics).
    #[error("calibration error: {0}")]
    Calibration(String),

    /// An operation received arguments violating its preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A depth value that must be strictly positive was not.
    #[error("invalid depth: {0}")]
    InvalidDepth(f64),

    /// A file did not match its declared byte layout.
    #[error("format error: {0}")]
    Format(String),

    /// A sample directory or its contents failed consistency checks.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code convention: 1 for validation-class errors,
    /// 2 for I/O and format errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Format(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

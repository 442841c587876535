use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Advice printed when a trajectory leaves the trapping ball.
pub const BALL_ESCAPE_ADVICE: &str = "Decrease the value ε_pw and/or ε_m";

#[derive(Debug, Error)]
pub enum Error {
    #[error("mantissa must have at least {min} bits, got {bits}")]
    InsufficientPrecision { bits: u32, min: u32 },

    #[error("precision mismatch: {left}-bit operand combined with {right}-bit operand")]
    PrecisionMismatch { left: u32, right: u32 },

    #[error("cannot parse decimal {text:?}: {reason}")]
    Parse { text: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{path}: {field}: {message}")]
    SystemFormat {
        path: String,
        field: String,
        message: String,
    },

    #[error(
        "series did not meet tolerance {eps_pw} within degree {max_degree} for step {dt}; \
         use a smaller step or a larger ε_pw"
    )]
    Truncation {
        max_degree: usize,
        dt: String,
        eps_pw: String,
    },

    #[error("trajectory left the trapping ball at t = {time} (distance {distance}): {advice}")]
    BallEscape {
        time: String,
        distance: String,
        advice: String,
    },

    #[error("{0}")]
    Degeneracy(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InsufficientPrecision { .. }
            | Error::PrecisionMismatch { .. }
            | Error::Parse { .. }
            | Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::SystemFormat { .. }
            | Error::Json(_) => 2,
            Error::BallEscape { .. } => 3,
            Error::Truncation { .. } => 4,
            Error::Degeneracy(_) => 5,
            Error::Io { .. } => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

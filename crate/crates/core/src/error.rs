use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid FEN ({field}): {message}")]
    Fen { field: &'static str, message: String },

    #[error("invalid move: {0}")]
    Move(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("PGN error: {0}")]
    Pgn(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient at step {step} in `{param}`")]
    Numeric { step: u64, param: String },

    #[error("resume hash mismatch for {0}")]
    ResumeMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn fen(field: &'static str, message: impl Into<String>) -> Self {
        Error::Fen {
            field,
            message: message.into(),
        }
    }

    /// Prefixes the message with `ctx`, keeping the variant (and exit code).
    pub fn context(self, ctx: &str) -> Self {
        match self {
            Error::Move(m) => Error::Move(format!("{ctx}: {m}")),
            Error::Contract(m) => Error::Contract(format!("{ctx}: {m}")),
            Error::Pgn(m) => Error::Pgn(format!("{ctx}: {m}")),
            Error::Data(m) => Error::Data(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
            Error::ResumeMismatch(m) => Error::ResumeMismatch(format!("{ctx}: {m}")),
            Error::Checkpoint(m) => Error::Checkpoint(format!("{ctx}: {m}")),
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{ctx}: {e}"))),
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            Error::Numeric { .. } => 4,
            Error::ResumeMismatch(_) => 5,
            _ => 3,
        }
    }
}

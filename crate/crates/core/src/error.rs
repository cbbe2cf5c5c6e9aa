use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the decoding stack.
///
/// Each variant maps onto a process exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent inputs or options (mismatched vocabularies, bad flags).
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called outside its domain (empty hypothesis set, λ ≤ 0).
    #[error("domain error: {0}")]
    Domain(String),
    /// Malformed input data, located by file and line when known.
    #[error("data error{}: {message}", location(.path, .line))]
    Data {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },
    /// A guard refused to run (oracle space too large, estimator not applicable).
    #[error("refused: {0}")]
    Refused(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(path: &Option<PathBuf>, line: &Option<usize>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!(" at {}:{}", p.display(), l),
        (Some(p), None) => format!(" in {}", p.display()),
        (None, Some(l)) => format!(" at line {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn data(message: impl Into<String>) -> Self {
        Error::Data {
            path: None,
            line: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 2 configuration, 3 data, 4 guard/refusal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Domain(_) | Error::Data { .. } | Error::Io { .. } => 3,
            Error::Refused(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

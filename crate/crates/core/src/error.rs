use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: no header contains \"UID\"", .0.display())]
    MissingUidColumn(PathBuf),

    #[error("{}: more than one header contains \"UID\"", .0.display())]
    AmbiguousUidColumn(PathBuf),

    #[error("duplicate fact uid {uid:?} in {} and {}", first.display(), second.display())]
    DuplicateUid {
        uid: String,
        first: PathBuf,
        second: PathBuf,
    },

    #[error("explanation token {0:?} is not of the form uid|ROLE")]
    ExplanationToken(String),

    #[error("question {qid}: answer key {key:?} is not one of the choices")]
    UnresolvedAnswer { qid: String, key: String },

    #[error("unknown fact uid(s): {}", .0.join(", "))]
    UnknownFacts(Vec<String>),

    #[error("unknown question id {0:?}")]
    UnknownQuestion(String),

    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code class: 2 for I/O and file-format problems,
    /// 1 for content problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::MissingUidColumn(_)
            | Error::AmbiguousUidColumn(_) => 2,
            _ => 1,
        }
    }
}

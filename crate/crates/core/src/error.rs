use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Location of a malformed token inside a text input (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("parse error at {position}: cannot read {token:?} as a number")]
    Parse { position: Position, token: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("point at depth {depth} is behind the camera")]
    BehindCamera { depth: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate box: apparent height {height} px")]
    DegenerateBox { height: f64 },

    #[error("no samples selected for statistics")]
    EmptyStats,

    #[error("no height prior for class {0:?}")]
    MissingClass(String),

    #[error("vote maps carry zero total mass")]
    ZeroMass,

    #[error("linear voting head has no fitted parameters")]
    UninitializedHead,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("KL descent failed to converge at iteration {iteration}; recent losses {trace:?}")]
    NonConvergence { iteration: usize, trace: Vec<f64> },

    #[error("normal equations are singular")]
    SingularSystem,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach the file that produced this error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping file-context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for malformed text (bad field counts, unreadable numbers).
    pub fn is_format(&self) -> bool {
        matches!(self.root(), Error::Format { .. } | Error::Parse { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

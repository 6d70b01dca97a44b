use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("tree parse error at offset {offset}: {message}")]
    TreeParse { offset: usize, message: String },

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("co-training aborted at iteration {iteration}: {message}")]
    Cotraining { iteration: usize, message: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("knowledge base file: {0}")]
    KbFormat(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("provider failure: {0}")]
    Provider(String),

    #[error("external scorer: {0}")]
    ExternalScorer(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("property not covered: {0}")]
    PropertyNotCovered(String),

    #[error("missing prerequisite for stage `{stage}`: {missing} (try `simkb {run_first}` first)")]
    MissingPrerequisite {
        stage: String,
        missing: String,
        run_first: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input rather than an internal fault.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

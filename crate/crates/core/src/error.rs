use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty file: {0}")]
    EmptyFile(PathBuf),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("unknown label {label:?} at line {line}")]
    UnknownLabel { label: String, line: usize },

    #[error("need at least {need} amounts to fit decile bins, got {got}")]
    TooFewAmounts { need: usize, got: usize },

    #[error("need at least two classes in the training data")]
    SingleClass,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged in {stage}: non-finite loss at step {step}")]
    NonFiniteLoss { stage: &'static str, step: usize },

    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("degenerate embedding")]
    DegenerateEmbedding,

    #[error("no correctly-classified examples")]
    NoCorrectExamples,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: checkpoint has {expected}, vocabulary is {actual}")]
    VocabMismatch { expected: String, actual: String },

    #[error("config hash mismatch: {0}")]
    HashChain(String),

    #[error("refusing to overwrite existing output {0}")]
    OutputExists(PathBuf),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Wraps an IO error with the path it concerns.
    pub fn at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Error::File {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

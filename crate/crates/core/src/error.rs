//! Crate-wide error type. Variants map one-to-one onto the failure modes of
//! the public operations; `kind` gives the stable machine-readable name used
//! in CLI error reports.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // corpus
    #[error("malformed record at {path}:{line}: {reason}")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate dialogue id {0:?}")]
    DuplicateId(String),
    #[error("dataset contains no records")]
    EmptySplit,
    #[error("seed pool of {pool} OOS dialogues is smaller than the budget {budget}")]
    InsufficientPool { pool: usize, budget: usize },
    #[error("invalid synthetic corpus spec: {0}")]
    InvalidSpec(String),

    // embedding
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("no vector stored for id {0:?}")]
    MissingId(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    // matcher
    #[error("source dataset contains no user utterances")]
    EmptySource,

    // generator
    #[error("dialogue {0:?} has no user turn")]
    NoUserTurn(String),
    #[error("match text is empty")]
    EmptyMatch,

    // models
    #[error("training data contains fewer than two classes")]
    SingleClass,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("intent {0:?} has fewer than two examples")]
    SingletonIntent(String),
    #[error("covariance is singular even after regularization")]
    SingularCovariance,

    // detectors / metrics
    #[error("scores contain a single class; both INS and OOS are required")]
    SingleClassScores,
    #[error("score for {0:?} is not finite")]
    NonFiniteScore(String),
    #[error("voter {0:?} has no tuned threshold")]
    UntunedVoter(String),

    // election
    #[error("source index of {index} items cannot supply {d} matches per seed")]
    ExhaustedSourcePool { index: usize, d: usize },

    // configuration / artifacts
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name for CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedRecord { .. } => "MalformedRecord",
            Error::DuplicateId(_) => "DuplicateId",
            Error::EmptySplit => "EmptySplit",
            Error::InsufficientPool { .. } => "InsufficientPool",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::MissingId(_) => "MissingId",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::EmptySource => "EmptySource",
            Error::NoUserTurn(_) => "NoUserTurn",
            Error::EmptyMatch => "EmptyMatch",
            Error::SingleClass => "SingleClass",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::SingletonIntent(_) => "SingletonIntent",
            Error::SingularCovariance => "SingularCovariance",
            Error::SingleClassScores => "SingleClassScores",
            Error::NonFiniteScore(_) => "NonFiniteScore",
            Error::UntunedVoter(_) => "UntunedVoter",
            Error::ExhaustedSourcePool { .. } => "ExhaustedSourcePool",
            Error::MissingArtifact(_) => "MissingArtifact",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io { .. } => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

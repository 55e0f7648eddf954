use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Input files are missing, unreadable or violate a format contract.
    Validation,
    /// Inputs are well formed but an analysis precondition does not hold.
    Precondition,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("item {id:?} needs bytes [{start}, {end}) but the vector file has {len} bytes")]
    OffsetOutOfBounds {
        id: String,
        start: u64,
        end: u64,
        len: u64,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("item {id:?} has a non-finite value at row {row}, column {col}")]
    NonFiniteVector { id: String, row: usize, col: usize },
    #[error("item {id:?} row {row} has norm {norm}, manifest declares normalized vectors")]
    NotNormalized { id: String, row: usize, norm: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid embedding set {id:?}: {reason}")]
    InvalidSet { id: String, reason: String },
    #[error("store would contain no items")]
    EmptyStore,
    #[error("stores disagree on the normalized flag")]
    NormalizationMismatch,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown query {0:?}")]
    UnknownQuery(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("parse error in {path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("no query of the run overlaps the qrels")]
    EmptyIntersection,
    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("query {0:?} has no positive in its ranking")]
    NoPositiveInRanking(String),
    #[error("query {0:?} has no positive")]
    NoPositive(String),
    #[error("query {0:?}: no irrelevant item is ranked below the positive")]
    NoNegativeBelowPositive(String),
    #[error("chunk {0:?} is not assigned to any bin")]
    UnbinnedChunk(String),
    #[error("run is truncated for query {0:?}; this analysis needs deeper rankings")]
    TruncatedRun(String),
    #[error("no query qualifies for the analysis")]
    NoQualifyingQueries,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::MalformedManifest(_) => "MalformedManifest",
            Error::OffsetOutOfBounds { .. } => "OffsetOutOfBounds",
            Error::DuplicateId(_) => "DuplicateId",
            Error::NonFiniteVector { .. } => "NonFiniteVector",
            Error::NotNormalized { .. } => "NotNormalized",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::InvalidSet { .. } => "InvalidSet",
            Error::EmptyStore => "EmptyStore",
            Error::NormalizationMismatch => "NormalizationMismatch",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::UnknownQuery(_) => "UnknownQuery",
            Error::UnknownItem(_) => "UnknownItem",
            Error::Parse { .. } => "Parse",
            Error::EmptyIntersection => "EmptyIntersection",
            Error::TooFewItems { .. } => "TooFewItems",
            Error::NoPositiveInRanking(_) => "NoPositiveInRanking",
            Error::NoPositive(_) => "NoPositive",
            Error::NoNegativeBelowPositive(_) => "NoNegativeBelowPositive",
            Error::UnbinnedChunk(_) => "UnbinnedChunk",
            Error::TruncatedRun(_) => "TruncatedRun",
            Error::NoQualifyingQueries => "NoQualifyingQueries",
            Error::EmptyInput => "EmptyInput",
            Error::InvalidConfig(_) => "InvalidConfig",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. }
            | Error::MalformedManifest(_)
            | Error::OffsetOutOfBounds { .. }
            | Error::DuplicateId(_)
            | Error::NonFiniteVector { .. }
            | Error::NotNormalized { .. }
            | Error::DimMismatch { .. }
            | Error::InvalidSet { .. }
            | Error::EmptyStore
            | Error::NormalizationMismatch
            | Error::Parse { .. } => ErrorClass::Validation,
            _ => ErrorClass::Precondition,
        }
    }
}

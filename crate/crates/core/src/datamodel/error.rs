use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while ingesting or persisting dataset artifacts.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateSampleId(String),
    #[error("missing feature file {0}")]
    MissingFeatureFile(PathBuf),
    #[error("missing dictionary file {0}")]
    MissingDictionary(PathBuf),
    #[error("bad magic header (expected {expected})")]
    BadMagic { expected: &'static str },
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("non-finite value at payload index {0}")]
    NonFiniteValue(usize),
    #[error("invalid presence byte {value} at frame {frame}")]
    InvalidPresenceByte { frame: usize, value: u8 },
    #[error("frame count mismatch for `{sample_id}`: {detail}")]
    FrameCountMismatch { sample_id: String, detail: String },
    #[error("invalid segment for `{sample_id}`: [{start}, {end}) with {frame_count} frames")]
    InvalidSegment { sample_id: String, start: usize, end: usize, frame_count: usize },
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("duplicate gloss `{0}`")]
    DuplicateGloss(String),
    #[error("unknown {kind} label `{label}` in entry `{gloss_id}`")]
    UnknownComponentLabel { gloss_id: String, kind: String, label: String },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("schema violation: {}", .0.join(", "))]
    SchemaViolation(Vec<String>),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}

pub type DataResult<T> = Result<T, DataError>;

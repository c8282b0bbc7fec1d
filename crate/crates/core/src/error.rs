use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {0}")]
    InputTooShort(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite values: {0}")]
    Numerics(String),
    #[error("missing tensors: {}", .0.join(", "))]
    MissingTensor(Vec<String>),
    #[error("unknown tensors: {}", .0.join(", "))]
    UnknownTensor(Vec<String>),
    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("no label has both positive and negative examples")]
    DegenerateMetric,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

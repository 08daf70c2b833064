use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("prompt does not match the {template} template at byte {position}: {reason}")]
    TemplateMismatch {
        template: &'static str,
        position: usize,
        reason: String,
    },

    #[error("word {surface:?} at bytes {start}..{end} has no covering token")]
    Alignment { surface: String, start: usize, end: usize },

    #[error("attention row {row} has every column masked")]
    DegenerateRow { row: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no attention record passed the layer/step filter")]
    EmptySelection,

    #[error("concept regions {first} and {second} overlap at position {position}")]
    Overlap {
        first: usize,
        second: usize,
        position: usize,
    },

    #[error("no stored {kind} map for step {step}, layer {layer}")]
    RecordMismatch {
        kind: &'static str,
        step: usize,
        layer: usize,
    },

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("invalid token assignment: {0}")]
    InvalidAssignment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed container {path:?}: {reason}")]
    Container { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

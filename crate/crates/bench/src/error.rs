use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] spdiffusion::Error),

    #[error("malformed scorer response: {0}")]
    MalformedResponse(String),

    #[error("scorer transport failed after {attempts} attempt(s): {reason}")]
    Transport { attempts: usize, reason: String },

    #[error("stub scorer needs evidence for this item: {0}")]
    MissingEvidence(&'static str),

    #[error("{path}: {reason}")]
    Report { path: PathBuf, reason: String },

    #[error("image encoding failed: {0}")]
    Encode(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

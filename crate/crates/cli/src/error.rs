use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] spdiffusion::Error),

    #[error(transparent)]
    Bench(#[from] spdiffusion_bench::BenchError),

    #[error("missing record: {0}")]
    MissingRecord(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("replay differs from {manifest:?}: {mismatches}")]
    ReplayMismatch { manifest: PathBuf, mismatches: String },

    #[error("{path:?}: {source}")]
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
    Image(#[from] image::ImageError),
}

impl CliError {
    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::File { path, source }
    }

    /// The diagnostic flattened to a single line.
    pub fn one_line(&self) -> String {
        self.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

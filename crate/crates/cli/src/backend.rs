use spdiffusion::pipeline::{DenoiserBackend, ToyDenoiser};

use crate::error::{CliError, Result};

/// Backends this build can instantiate by name.
pub const AVAILABLE: &[&str] = &["toy"];

/// `toy`, or `adapter:<name>` for an external model adapter. No adapters
/// are compiled into this build, so every adapter name is rejected.
pub fn resolve_backend(spec: &str) -> Result<Box<dyn DenoiserBackend>> {
    match spec {
        "toy" => Ok(Box::new(ToyDenoiser::default())),
        other => match other.strip_prefix("adapter:") {
            Some(name) => Err(CliError::Config(format!(
                "no backend adapter {name:?} in this build (available: {})",
                AVAILABLE.join(", ")
            ))),
            None => Err(CliError::Config(format!(
                "unknown backend {other:?}; use toy or adapter:<name>"
            ))),
        },
    }
}

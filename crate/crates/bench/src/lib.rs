//! Benchmark harness: the three prompt sets, threshold and token-mask
//! ablations, and VQA-style scoring through pluggable clients.

pub mod ablation;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod questions;
pub mod report;
pub mod run;
pub mod scenario;
pub mod scorer;
pub mod sweep;

pub use error::{BenchError, Result};

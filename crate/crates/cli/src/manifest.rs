//! Run manifests: the resolved settings of a command plus the hashes of
//! what it wrote, enough to run it again and compare.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{cmd_bench, BenchSettings};
use crate::error::{CliError, Result};
use crate::generate::{cmd_generate, GenerateSettings};
use crate::inspect::{cmd_inspect, InspectSettings};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "settings", rename_all = "snake_case")]
pub enum Invocation {
    Generate(GenerateSettings),
    Inspect(InspectSettings),
    Bench(BenchSettings),
}

impl Invocation {
    pub fn out_dir(&self) -> &Path {
        match self {
            Invocation::Generate(s) => &s.out,
            Invocation::Inspect(s) => &s.out,
            Invocation::Bench(s) => &s.out,
        }
    }

    pub fn with_out_dir(&self, out: PathBuf) -> Invocation {
        let mut inv = self.clone();
        match &mut inv {
            Invocation::Generate(s) => s.out = out,
            Invocation::Inspect(s) => s.out = out,
            Invocation::Bench(s) => s.out = out,
        }
        inv
    }

    /// Runs the command; the returned manifest has been written.
    pub fn execute(&self) -> Result<RunManifest> {
        Ok(match self {
            Invocation::Generate(s) => cmd_generate(s)?.manifest,
            Invocation::Inspect(s) => cmd_inspect(s)?.manifest,
            Invocation::Bench(s) => cmd_bench(s)?.manifest,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub invocation: Invocation,
    pub prompts: Vec<String>,
    pub seeds: Vec<u64>,
    /// Output file (relative to the output directory) to SHA-256 hex.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(CliError::file(path))?))
}

impl RunManifest {
    /// Hashes `files` under the invocation's output directory and writes
    /// the manifest next to them.
    pub fn record(invocation: Invocation, prompts: Vec<String>, seeds: Vec<u64>, files: &[String]) -> Result<Self> {
        let out = invocation.out_dir().to_path_buf();
        let artifacts = files
            .iter()
            .map(|f| Ok((f.clone(), sha256_file(&out.join(f))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            prompts,
            seeds,
            artifacts,
        };
        fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::file(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Artifacts whose hash differs from `other`, or that only one side has.
    pub fn differences(&self, other: &RunManifest) -> Vec<String> {
        let mut names: Vec<&String> = self.artifacts.keys().chain(other.artifacts.keys()).collect();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .filter(|n| self.artifacts.get(*n) != other.artifacts.get(*n))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub original: RunManifest,
    pub replayed: RunManifest,
}

/// Re-runs the command of the manifest at `path` into `out` (default:
/// `replay/` beside the manifest) and compares artifact hashes.
pub fn replay(path: &Path, out: Option<PathBuf>) -> Result<ReplayOutcome> {
    let original = RunManifest::load(path)?;
    let out = out.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("replay"));
    if out.exists() && fs::read_dir(&out).map_err(CliError::file(&out))?.next().is_some() {
        return Err(CliError::Config(format!(
            "replay directory {} is not empty; pass an empty --out",
            out.display()
        )));
    }
    let replayed = original.invocation.with_out_dir(out).execute()?;
    let diff = original.differences(&replayed);
    if !diff.is_empty() {
        return Err(CliError::ReplayMismatch {
            manifest: path.to_path_buf(),
            mismatches: diff.join(", "),
        });
    }
    Ok(ReplayOutcome { original, replayed })
}

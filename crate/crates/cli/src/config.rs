//! Flat `key = value` configuration files.
//!
//! One setting per line, keys spelled like the long flags without the
//! leading dashes (`s-ca = 0.85`). Blank lines and lines starting with `#`
//! are ignored. A flag given on the command line overrides the file, and
//! the file overrides the built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    source: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl KvConfig {
    /// Parses `text`, rejecting keys outside `allowed` and repeated keys.
    pub fn parse(text: &str, allowed: &[&str], source: Option<&Path>) -> Result<Self> {
        let origin = source.map_or_else(|| "config".to_string(), |p| p.display().to_string());
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", n + 1)))?;
            let key = key.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Config(format!(
                    "{origin}:{}: unknown key {key:?} (known: {})",
                    n + 1,
                    allowed.join(", ")
                )));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("{origin}:{}: {key:?} set twice", n + 1)));
            }
        }
        Ok(Self {
            source: source.map(Path::to_path_buf),
            values,
        })
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::file(path))?;
        Self::parse(&text, allowed, Some(path))
    }

    /// The file named by `--config`, or an empty configuration.
    pub fn optional(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), |p| Self::load(p, allowed))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag, else file, else nothing.
    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.get(key)
            .map(|v| {
                v.parse().map_err(|e| {
                    let origin = self
                        .source
                        .as_ref()
                        .map_or_else(|| "config".into(), |p| p.display().to_string());
                    CliError::Config(format!("{origin}: {key} = {v:?}: {e}"))
                })
            })
            .transpose()
    }

    /// Flag, else file, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }
}

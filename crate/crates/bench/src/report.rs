//! Per-item score records and the summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spdiffusion::prompt::Template;

use crate::error::{BenchError, Result};
use crate::evaluate::Method;

pub type ItemKey = (Template, Method, usize, u64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub dataset: Template,
    pub method: Method,
    pub prompt_index: usize,
    pub prompt: String,
    pub seed: u64,
    /// Mean yes-probability over the concept questions, in [0, 1].
    pub blip: Option<f64>,
    /// Round-2 judgement, in [0, 100].
    pub internvl: Option<f64>,
    #[serde(default)]
    pub errors: Vec<String>,
}

impl ItemRecord {
    pub fn key(&self) -> ItemKey {
        (self.dataset, self.method, self.prompt_index, self.seed)
    }

    pub fn complete(&self) -> bool {
        self.blip.is_some() && self.internvl.is_some()
    }
}

/// One (method, dataset) cell pair of the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: Template,
    pub method: Method,
    /// Means over scored items; `None` when nothing was scored.
    pub blip: Option<f64>,
    pub internvl: Option<f64>,
    pub items: usize,
    pub blip_failed: usize,
    pub internvl_failed: usize,
}

/// Keeps the last record per key, ordered by key.
pub fn latest_per_key(items: &[ItemRecord]) -> Vec<ItemRecord> {
    let mut map: BTreeMap<ItemKey, &ItemRecord> = BTreeMap::new();
    for item in items {
        map.insert(item.key(), item);
    }
    map.into_values().cloned().collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(items: &[ItemRecord]) -> Vec<SummaryRow> {
    let items = latest_per_key(items);
    let mut groups: BTreeMap<(Method, usize), Vec<&ItemRecord>> = BTreeMap::new();
    for item in &items {
        let column = Template::ALL.iter().position(|t| *t == item.dataset).unwrap_or(0);
        groups.entry((item.method, column)).or_default().push(item);
    }
    groups
        .into_iter()
        .map(|((method, column), group)| SummaryRow {
            dataset: Template::ALL[column],
            method,
            blip: mean(group.iter().filter_map(|i| i.blip)),
            internvl: mean(group.iter().filter_map(|i| i.internvl)),
            items: group.len(),
            blip_failed: group.iter().filter(|i| i.blip.is_none()).count(),
            internvl_failed: group.iter().filter(|i| i.internvl.is_none()).count(),
        })
        .collect()
}

fn cell(v: Option<f64>, scale: f64, decimals: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.*}", decimals, v * scale))
}

fn table_columns(rows: &[SummaryRow]) -> (Vec<Template>, Vec<Method>) {
    let datasets: Vec<Template> = Template::ALL
        .into_iter()
        .filter(|t| rows.iter().any(|r| r.dataset == *t))
        .collect();
    let methods: Vec<Method> = Method::ALL
        .into_iter()
        .filter(|m| rows.iter().any(|r| r.method == *m))
        .collect();
    (datasets, methods)
}

/// Methods as rows; per dataset a BLIP-VQA and an InternVL-VQA column.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let (datasets, methods) = table_columns(rows);
    let mut out = format!("{:<12}", "Method");
    for d in &datasets {
        let _ = write!(out, " {:>26}", d.name());
    }
    out.push('\n');
    let _ = write!(out, "{:<12}", "");
    for _ in &datasets {
        let _ = write!(out, " {:>12} {:>13}", "BLIP-VQA", "InternVL-VQA");
    }
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "{:<12}", m.name());
        for d in &datasets {
            let row = rows.iter().find(|r| r.method == *m && r.dataset == *d);
            let _ = write!(
                out,
                " {:>12} {:>13}",
                cell(row.and_then(|r| r.blip), 1.0, 4),
                cell(row.and_then(|r| r.internvl), 1.0, 2)
            );
        }
        out.push('\n');
    }
    let failed: usize = rows.iter().map(|r| r.blip_failed.max(r.internvl_failed)).sum();
    let total: usize = rows.iter().map(|r| r.items).sum();
    let _ = writeln!(
        out,
        "\n{total} item(s), {failed} with a failed score (excluded from means)"
    );
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let (datasets, methods) = table_columns(rows);
    let mut out = String::from("method");
    for d in &datasets {
        let _ = write!(out, ",{} BLIP-VQA,{} InternVL-VQA", d.name(), d.name());
    }
    out.push('\n');
    for m in &methods {
        out.push_str(m.name());
        for d in &datasets {
            let row = rows.iter().find(|r| r.method == *m && r.dataset == *d);
            let blip = row.and_then(|r| r.blip).map_or(String::new(), |v| v.to_string());
            let intern = row.and_then(|r| r.internvl).map_or(String::new(), |v| v.to_string());
            let _ = write!(out, ",{blip},{intern}");
        }
        out.push('\n');
    }
    out
}

/// Appends one JSON line and flushes.
pub fn append_item(file: &mut fs::File, item: &ItemRecord) -> Result<()> {
    let mut line = serde_json::to_string(item)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Rewrites the item file as exactly `items`, one per line, via a
/// temporary file and a rename.
pub fn write_items(path: &Path, items: &[ItemRecord]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a JSON-lines item file. A truncated last line (an interrupted
/// write) is dropped; any other bad line is an error.
pub fn read_items(path: &Path) -> Result<Vec<ItemRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut items = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(item) => items.push(item),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {}
            Err(e) => {
                return Err(BenchError::Report {
                    path: path.to_path_buf(),
                    reason: format!("line {}: {e}", i + 1),
                })
            }
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metadata: serde_json::Value,
    pub summary: Vec<SummaryRow>,
    #[serde(skip)]
    pub items: Vec<ItemRecord>,
}

impl ScoreReport {
    pub fn from_items(metadata: serde_json::Value, items: &[ItemRecord]) -> Self {
        Self {
            metadata,
            summary: aggregate(items),
            items: latest_per_key(items),
        }
    }

    /// Writes `summary.txt`, `summary.csv` and `report.json` into `dir`.
    pub fn write_summary(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("summary.txt"), summary_text(&self.summary))?;
        fs::write(dir.join("summary.csv"), summary_csv(&self.summary))?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

//! Resumable dataset benchmark: every prompt x seed x method, scored and
//! appended to `items.jsonl` as soon as it finishes.

use std::fs::{self, OpenOptions};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spdiffusion::pipeline::{prepare_parsed, DenoiserBackend, PipelineConfig};
use spdiffusion::prompt::Template;

use crate::dataset::PromptDataset;
use crate::error::Result;
use crate::evaluate::{generate_for_scoring, Method};
use crate::report::{append_item, read_items, write_items, ItemKey, ItemRecord, ScoreReport};
use crate::scorer::{blip_score, internvl_score, ScorerClient};

pub const ITEMS_FILE: &str = "items.jsonl";
pub const MANIFEST_FILE: &str = "bench_manifest.json";

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub datasets: Vec<PromptDataset>,
    pub methods: Vec<Method>,
    pub pipeline: PipelineConfig,
    pub workers: usize,
    /// Stop after this many newly scored items (the run stays resumable).
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Partial,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub status: RunStatus,
    pub datasets: Vec<(Template, u64)>,
    pub methods: Vec<Method>,
    pub seeds_per_prompt: usize,
    pub pipeline: PipelineConfig,
    pub backend: String,
    pub scorer: String,
    pub total_items: usize,
    pub completed_items: usize,
    pub failed_items: usize,
}

impl BenchManifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: ScoreReport,
    pub manifest: BenchManifest,
    /// Items scored by this call (the rest were already on disk).
    pub newly_scored: usize,
}

struct Job<'a> {
    dataset: &'a PromptDataset,
    index: usize,
    seed: u64,
    method: Method,
}

impl Job<'_> {
    fn key(&self) -> ItemKey {
        (self.dataset.template, self.method, self.index, self.seed)
    }
}

fn score_job(
    job: &Job<'_>,
    cfg: &PipelineConfig,
    backend: &dyn DenoiserBackend,
    scorer: &dyn ScorerClient,
) -> ItemRecord {
    let item = &job.dataset.items[job.index];
    let mut record = ItemRecord {
        dataset: job.dataset.template,
        method: job.method,
        prompt_index: job.index,
        prompt: item.text.clone(),
        seed: job.seed,
        blip: None,
        internvl: None,
        errors: Vec::new(),
    };
    let cfg = PipelineConfig {
        seed: job.seed,
        ..cfg.clone()
    };
    let generated = prepare_parsed(backend, &item.gold)
        .map_err(Into::into)
        .and_then(|prepared| generate_for_scoring(job.method, &prepared, &cfg, backend).map(|g| (prepared, g)));
    let (prepared, generated) = match generated {
        Ok(v) => v,
        Err(e) => {
            record.errors.push(e.to_string());
            return record;
        }
    };
    match blip_score(scorer, &generated.image, &prepared.parsed, generated.evidence.as_ref()) {
        Ok(s) => record.blip = Some(s),
        Err(e) => record.errors.push(format!("blip: {e}")),
    }
    match internvl_score(scorer, &generated.image, &item.text, generated.evidence.as_ref()) {
        Ok(j) => record.internvl = Some(j.score),
        Err(e) => record.errors.push(format!("internvl: {e}")),
    }
    record
}

/// Runs (or resumes) `plan` in `out_dir`. Items already scored in
/// `items.jsonl` are skipped; items that failed before are retried.
pub fn run_benchmark(
    plan: &BenchPlan,
    backend: &dyn DenoiserBackend,
    scorer: &dyn ScorerClient,
    out_dir: &Path,
) -> Result<BenchOutcome> {
    plan.pipeline.validate()?;
    fs::create_dir_all(out_dir)?;
    let items_path = out_dir.join(ITEMS_FILE);
    let existing = read_items(&items_path)?;
    let done: std::collections::BTreeSet<ItemKey> =
        existing.iter().filter(|i| i.complete()).map(ItemRecord::key).collect();

    let mut all = Vec::new();
    for dataset in &plan.datasets {
        for index in 0..dataset.items.len() {
            for seed in dataset.seeds() {
                for &method in &plan.methods {
                    all.push(Job {
                        dataset,
                        index,
                        seed,
                        method,
                    });
                }
            }
        }
    }
    let total_items = all.len();
    let mut pending: Vec<&Job<'_>> = all.iter().filter(|j| !done.contains(&j.key())).collect();
    if let Some(limit) = plan.limit {
        pending.truncate(limit);
    }

    let mut manifest = BenchManifest {
        status: RunStatus::Partial,
        datasets: plan.datasets.iter().map(|d| (d.template, d.seed)).collect(),
        methods: plan.methods.clone(),
        seeds_per_prompt: plan.datasets.first().map_or(0, |d| d.seeds_per_prompt),
        pipeline: plan.pipeline.clone(),
        backend: backend.name().to_string(),
        scorer: scorer.name(),
        total_items,
        completed_items: done.len(),
        failed_items: 0,
    };
    manifest.save(out_dir)?;

    let file = Mutex::new(OpenOptions::new().create(true).append(true).open(&items_path)?);
    // An interrupted write may have left a partial line; start on a fresh one.
    if fs::read(&items_path)?.last().is_some_and(|&b| b != b'\n') {
        use std::io::Write;
        file.lock().expect("items file lock").write_all(b"\n")?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers.max(1))
        .build()
        .map_err(|e| spdiffusion::Error::Backend(e.to_string()))?;
    let fresh: Vec<ItemRecord> = pool.install(|| {
        pending
            .par_iter()
            .map(|job| {
                let record = score_job(job, &plan.pipeline, backend, scorer);
                append_item(&mut file.lock().expect("items file lock"), &record)?;
                Ok(record)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut items = existing;
    items.extend(fresh.iter().cloned());
    let report = ScoreReport::from_items(
        serde_json::json!({
            "backend": manifest.backend,
            "scorer": manifest.scorer,
            "pipeline": plan.pipeline,
            "datasets": manifest.datasets,
            "seeds_per_prompt": manifest.seeds_per_prompt,
        }),
        &items,
    );
    manifest.completed_items = report.items.iter().filter(|i| i.complete()).count();
    manifest.failed_items = report.items.iter().filter(|i| !i.complete()).count();
    manifest.status = if report.items.len() == total_items && manifest.failed_items == 0 {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    // Compact to one record per key in key order: drops superseded failures
    // and any cut-off line, and makes the file independent of worker timing.
    write_items(&items_path, &report.items)?;
    manifest.save(out_dir)?;
    report.write_summary(out_dir)?;
    Ok(BenchOutcome {
        report,
        manifest,
        newly_scored: fresh.len(),
    })
}

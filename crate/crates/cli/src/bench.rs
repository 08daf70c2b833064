use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};
use spdiffusion::pipeline::PipelineConfig;
use spdiffusion::prompt::Template;
use spdiffusion_bench::ablation::{swap_groups, token_mask_ablation, AblationSpec};
use spdiffusion_bench::dataset::{generate_dataset, PromptDataset};
use spdiffusion_bench::evaluate::Method;
use spdiffusion_bench::run::{
    run_benchmark, BenchManifest, RunStatus, ITEMS_FILE, MANIFEST_FILE as BENCH_MANIFEST_FILE,
};
use spdiffusion_bench::scenario::{Scenario, ScenarioConfig, SCENARIO_PROMPT};
use spdiffusion_bench::scorer::{encode_png, ScorerClient, ServiceScorer, StubScorer};
use spdiffusion_bench::sweep::{default_thresholds, threshold_sweep, PromptCase, SweepCase, SweepContext, SweepMode};

use crate::backend::resolve_backend;
use crate::config::KvConfig;
use crate::error::{CliError, Result};
use crate::generate::{absolute, pipeline_config};
use crate::manifest::{Invocation, RunManifest};

/// Keys accepted in a `bench` config file.
pub const BENCH_KEYS: &[&str] = &[
    "dataset",
    "data-seed",
    "sweep",
    "thresholds",
    "ablation-tokens",
    "scorer",
    "methods",
    "limit",
    "prompts",
    "workers",
    "steps",
    "ts",
    "s-ca",
    "s-sa",
    "guidance",
    "backend",
    "out",
];

/// Scenario cases in a sweep without `--dataset`.
pub const DEFAULT_SCENARIOS: usize = 8;

#[derive(Debug, Clone, Default, Args)]
pub struct BenchArgs {
    /// Comma-separated prompt sets: cc500, wearing100, animals100
    #[arg(long)]
    pub dataset: Option<String>,
    /// Seed of the generated prompt sets [default: 0]
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Threshold sweep of SP-Extraction against direct cross-attention
    /// thresholding; runs on synthetic scenarios unless --dataset is given
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub sweep: Option<bool>,
    /// Comma-separated sweep thresholds [default: 0.1,...,0.9]
    #[arg(long)]
    pub thresholds: Option<String>,
    /// JSON file with a prompt, a seed and region/token assignments
    #[arg(long)]
    pub ablation_tokens: Option<PathBuf>,
    /// `stub` or `service:<url>` [default: stub]
    #[arg(long)]
    pub scorer: Option<String>,
    /// Comma-separated methods [default: baseline,spdiffusion]
    #[arg(long)]
    pub methods: Option<String>,
    /// Score at most this many pending items, then stop
    #[arg(long)]
    pub limit: Option<usize>,
    /// Use only the first N prompts of each set (or N scenarios)
    #[arg(long)]
    pub prompts: Option<usize>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub ts: Option<usize>,
    #[arg(long)]
    pub s_ca: Option<f32>,
    #[arg(long)]
    pub s_sa: Option<f32>,
    #[arg(long)]
    pub guidance: Option<f32>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Output directory [default: bench]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat key = value file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub datasets: Vec<Template>,
    pub data_seed: u64,
    pub sweep: bool,
    pub thresholds: Vec<f32>,
    pub ablation_tokens: Option<PathBuf>,
    pub scorer: String,
    pub methods: Vec<Method>,
    pub limit: Option<usize>,
    pub prompts: Option<usize>,
    pub workers: usize,
    pub steps: usize,
    pub ts: usize,
    pub s_ca: f32,
    pub s_sa: f32,
    pub guidance: f32,
    pub backend: String,
    pub out: PathBuf,
}

fn list<T>(text: &str, what: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| CliError::Config(format!("{what} {s:?}: {e}"))))
        .collect()
}

impl BenchArgs {
    pub fn resolve(&self) -> Result<BenchSettings> {
        let file = KvConfig::optional(self.config.as_deref(), BENCH_KEYS)?;
        let d = PipelineConfig::default();
        let datasets = file
            .pick_opt(self.dataset.clone(), "dataset")?
            .map(|s| list::<Template>(&s, "dataset"))
            .transpose()?
            .unwrap_or_default();
        let thresholds = file
            .pick_opt(self.thresholds.clone(), "thresholds")?
            .map(|s| list::<f32>(&s, "threshold"))
            .transpose()?
            .unwrap_or_else(default_thresholds);
        let methods = file
            .pick_opt(self.methods.clone(), "methods")?
            .map(|s| list::<Method>(&s, "method"))
            .transpose()?
            .unwrap_or_else(|| Method::ALL.to_vec());
        let workers = std::thread::available_parallelism().map_or(1, usize::from);
        let s = BenchSettings {
            datasets,
            data_seed: file.pick(self.data_seed, "data-seed", 0)?,
            sweep: file.pick(self.sweep, "sweep", false)?,
            thresholds,
            ablation_tokens: file
                .pick_opt(self.ablation_tokens.clone(), "ablation-tokens")?
                .map(absolute)
                .transpose()?,
            scorer: file.pick(self.scorer.clone(), "scorer", "stub".into())?,
            methods,
            limit: file.pick_opt(self.limit, "limit")?,
            prompts: file.pick_opt(self.prompts, "prompts")?,
            workers: file.pick(self.workers, "workers", workers)?.max(1),
            steps: file.pick(self.steps, "steps", d.total_steps)?,
            ts: file.pick(self.ts, "ts", d.protection_steps)?,
            s_ca: file.pick(self.s_ca, "s-ca", d.extraction.s_ca)?,
            s_sa: file.pick(self.s_sa, "s-sa", d.extraction.s_sa)?,
            guidance: file.pick(self.guidance, "guidance", d.guidance_scale)?,
            backend: file.pick(self.backend.clone(), "backend", "toy".into())?,
            out: file.pick(self.out.clone(), "out", PathBuf::from("bench"))?,
        };
        if s.sweep && s.ablation_tokens.is_some() {
            return Err(CliError::Config(
                "--sweep and --ablation-tokens are separate runs".into(),
            ));
        }
        if !s.sweep && s.ablation_tokens.is_none() && s.datasets.is_empty() {
            return Err(CliError::Config(
                "--dataset is required (cc500, wearing100, animals100)".into(),
            ));
        }
        if s.methods.is_empty() {
            return Err(CliError::Config("--methods lists no method".into()));
        }
        Ok(s)
    }
}

impl BenchSettings {
    pub fn pipeline(&self) -> PipelineConfig {
        pipeline_config(self.steps, self.ts, self.s_ca, self.s_sa, self.guidance, 0)
    }

    pub fn datasets(&self) -> Vec<PromptDataset> {
        self.datasets
            .iter()
            .map(|&t| {
                let mut d = generate_dataset(t, self.data_seed);
                if let Some(n) = self.prompts {
                    d.items.truncate(n);
                }
                d
            })
            .collect()
    }
}

pub fn resolve_scorer(spec: &str) -> Result<Box<dyn ScorerClient>> {
    match spec {
        "stub" => Ok(Box::new(StubScorer)),
        other => match other.strip_prefix("service:") {
            Some(url) if !url.is_empty() => Ok(Box::new(ServiceScorer::new(url))),
            _ => Err(CliError::Config(format!(
                "unknown scorer {other:?}; use stub or service:<url>"
            ))),
        },
    }
}

/// What `bench` ran.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchKind {
    Benchmark {
        status: RunStatus,
        completed: usize,
        total: usize,
    },
    Sweep {
        points: usize,
    },
    Ablation {
        swapped: bool,
    },
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub manifest: RunManifest,
    pub kind: BenchKind,
    /// Items (or sweep cells) whose scoring failed; their partial results
    /// are on disk.
    pub failed: usize,
}

pub fn cmd_bench(s: &BenchSettings) -> Result<BenchOutcome> {
    let backend = resolve_backend(&s.backend)?;
    let scorer = resolve_scorer(&s.scorer)?;
    s.pipeline().validate()?;
    fs::create_dir_all(&s.out).map_err(CliError::file(&s.out))?;
    if let Some(path) = &s.ablation_tokens {
        ablation(s, path, &*backend)
    } else if s.sweep {
        sweep(s, &*backend, &*scorer)
    } else {
        benchmark(s, &*backend, &*scorer)
    }
}

fn benchmark(
    s: &BenchSettings,
    backend: &dyn spdiffusion::pipeline::DenoiserBackend,
    scorer: &dyn ScorerClient,
) -> Result<BenchOutcome> {
    let datasets = s.datasets();
    let plan = spdiffusion_bench::run::BenchPlan {
        datasets: datasets.clone(),
        methods: s.methods.clone(),
        pipeline: s.pipeline(),
        workers: s.workers,
        limit: s.limit,
    };
    let outcome = run_benchmark(&plan, backend, scorer, &s.out)?;
    let files = [
        ITEMS_FILE,
        BENCH_MANIFEST_FILE,
        "summary.txt",
        "summary.csv",
        "report.json",
    ]
    .map(String::from);
    let prompts = datasets
        .iter()
        .flat_map(|d| d.items.iter().map(|i| i.text.clone()))
        .collect();
    let seeds = datasets.first().map(|d| d.seeds().collect()).unwrap_or_default();
    let manifest = RunManifest::record(Invocation::Bench(s.clone()), prompts, seeds, &files)?;
    let BenchManifest {
        status,
        completed_items,
        total_items,
        failed_items,
        ..
    } = outcome.manifest;
    Ok(BenchOutcome {
        manifest,
        kind: BenchKind::Benchmark {
            status,
            completed: completed_items,
            total: total_items,
        },
        failed: failed_items,
    })
}

fn sweep(
    s: &BenchSettings,
    backend: &dyn spdiffusion::pipeline::DenoiserBackend,
    scorer: &dyn ScorerClient,
) -> Result<BenchOutcome> {
    let pipeline = s.pipeline();
    let (cases, prompts, seeds): (Vec<SweepCase>, Vec<String>, Vec<u64>) = if s.datasets.is_empty() {
        let seeds: Vec<u64> = (0..s.prompts.unwrap_or(DEFAULT_SCENARIOS) as u64).collect();
        let cases = seeds
            .iter()
            .map(|&seed| {
                SweepCase::Scenario(Box::new(Scenario::generate(&ScenarioConfig {
                    seed,
                    ..Default::default()
                })))
            })
            .collect();
        (cases, vec![SCENARIO_PROMPT.to_string()], seeds)
    } else {
        let mut cases = Vec::new();
        let mut prompts = Vec::new();
        let datasets = s.datasets();
        for d in &datasets {
            for (i, item) in d.items.iter().enumerate() {
                prompts.push(item.text.clone());
                for seed in d.seeds() {
                    let id = format!("{}-{i}-s{seed}", d.template.slug());
                    cases.push(SweepCase::Prompt(Box::new(PromptCase::new(
                        id, &item.text, seed, &pipeline, backend,
                    )?)));
                }
            }
        }
        let seeds = datasets.first().map(|d| d.seeds().collect()).unwrap_or_default();
        (cases, prompts, seeds)
    };
    let ctx = SweepContext {
        backend,
        pipeline,
        scorer,
        workers: s.workers,
    };
    let report = threshold_sweep(&cases, &s.thresholds, &SweepMode::ALL, &ctx)?;

    let mut csv = String::from("mode,threshold,score,scored,failed\n");
    for p in &report.points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            p.mode.slug(),
            p.threshold,
            p.score,
            p.scored,
            p.failed
        );
    }
    fs::write(s.out.join("sweep.csv"), csv)?;
    fs::write(s.out.join("sweep.txt"), report.to_table())?;
    fs::write(s.out.join("sweep.json"), serde_json::to_string_pretty(&report)?)?;
    let files = ["sweep.csv", "sweep.txt", "sweep.json"].map(String::from);
    let manifest = RunManifest::record(Invocation::Bench(s.clone()), prompts, seeds, &files)?;
    Ok(BenchOutcome {
        manifest,
        kind: BenchKind::Sweep {
            points: report.points.len(),
        },
        failed: report.points.iter().map(|p| p.failed).sum(),
    })
}

fn ablation(
    s: &BenchSettings,
    path: &std::path::Path,
    backend: &dyn spdiffusion::pipeline::DenoiserBackend,
) -> Result<BenchOutcome> {
    let text = fs::read_to_string(path).map_err(CliError::file(path))?;
    let spec: AblationSpec = serde_json::from_str(&text)?;
    let cfg = PipelineConfig {
        seed: spec.seed,
        ..s.pipeline()
    };
    let mut runs = vec![("ablation", spec.assignments.clone())];
    let swapped = spec.assignments.len() == 2;
    if swapped {
        runs.push(("ablation_swapped", swap_groups(&spec.assignments, 0, 1)));
    }
    let mut files = Vec::new();
    let mut steps = Vec::new();
    for (name, assignments) in runs {
        let out = token_mask_ablation(&spec.prompt, &assignments, &cfg, backend)?;
        fs::write(s.out.join(format!("{name}.png")), encode_png(&out.output.image)?)?;
        fs::write(s.out.join(format!("{name}_mask.txt")), &out.mask_table)?;
        files.push(format!("{name}.png"));
        files.push(format!("{name}_mask.txt"));
        steps.push(out.backend_steps);
    }
    let summary = serde_json::json!({
        "prompt": spec.prompt,
        "seed": spec.seed,
        "assignments": spec.assignments,
        "swapped": swapped,
        "backend_steps": steps,
    });
    fs::write(s.out.join("ablation.json"), serde_json::to_string_pretty(&summary)?)?;
    files.push("ablation.json".into());
    let manifest = RunManifest::record(
        Invocation::Bench(s.clone()),
        vec![spec.prompt.clone()],
        vec![spec.seed],
        &files,
    )?;
    Ok(BenchOutcome {
        manifest,
        kind: BenchKind::Ablation { swapped },
        failed: 0,
    })
}

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use spdiffusion::dump::{Container, EntryKind};
use spdiffusion::extraction::{ExtractionConfig, RegionSet};
use spdiffusion::pipeline::{
    generate_prepared, generate_with_mask, initial_noise, prepare, run_plain, Diagnostics, Generation, PipelineConfig,
};
use spdiffusion::protect::build_sp_mask;
use spdiffusion_bench::scorer::encode_png;

use crate::backend::resolve_backend;
use crate::config::KvConfig;
use crate::error::{CliError, Result};
use crate::manifest::{Invocation, RunManifest};

pub const IMAGE_FILE: &str = "image.png";
pub const CONTAINER_FILE: &str = "attention.spda";
pub const MASK_FILE: &str = "mask.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

/// Keys accepted in a `generate` config file.
pub const GENERATE_KEYS: &[&str] = &[
    "prompt",
    "seed",
    "steps",
    "ts",
    "s-ca",
    "s-sa",
    "guidance",
    "backend",
    "out",
    "dump-attn",
    "no-protect",
    "mask-from",
];

#[derive(Debug, Clone, Default, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub prompt: Option<String>,
    /// Noise seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Denoising steps T [default: 20]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Recorded and replaced steps T_s [default: 2]
    #[arg(long)]
    pub ts: Option<usize>,
    /// Anchor threshold on cross-attention [default: 0.9]
    #[arg(long)]
    pub s_ca: Option<f32>,
    /// Region threshold on cross-normalized self-attention [default: 0.2]
    #[arg(long)]
    pub s_sa: Option<f32>,
    /// Classifier-free guidance scale [default: 7.5]
    #[arg(long)]
    pub guidance: Option<f32>,
    /// `toy` or `adapter:<name>` [default: toy]
    #[arg(long)]
    pub backend: Option<String>,
    /// Output directory [default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the attention/region container
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub dump_attn: Option<bool>,
    /// Plain generation without semantic protection
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub no_protect: Option<bool>,
    /// Reuse the regions stored in a container from an earlier run of the
    /// same prompt instead of extracting them
    #[arg(long)]
    pub mask_from: Option<PathBuf>,
    /// Flat key = value file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSettings {
    pub prompt: String,
    pub seed: u64,
    pub steps: usize,
    pub ts: usize,
    pub s_ca: f32,
    pub s_sa: f32,
    pub guidance: f32,
    pub backend: String,
    pub out: PathBuf,
    pub dump_attn: bool,
    pub no_protect: bool,
    pub mask_from: Option<PathBuf>,
}

pub(crate) fn absolute(path: PathBuf) -> Result<PathBuf> {
    std::path::absolute(&path).map_err(CliError::file(path))
}

impl GenerateArgs {
    pub fn resolve(&self) -> Result<GenerateSettings> {
        let file = KvConfig::optional(self.config.as_deref(), GENERATE_KEYS)?;
        let d = PipelineConfig::default();
        let prompt = file
            .pick_opt(self.prompt.clone(), "prompt")?
            .ok_or_else(|| CliError::Config("--prompt is required".into()))?;
        Ok(GenerateSettings {
            prompt,
            seed: file.pick(self.seed, "seed", d.seed)?,
            steps: file.pick(self.steps, "steps", d.total_steps)?,
            ts: file.pick(self.ts, "ts", d.protection_steps)?,
            s_ca: file.pick(self.s_ca, "s-ca", d.extraction.s_ca)?,
            s_sa: file.pick(self.s_sa, "s-sa", d.extraction.s_sa)?,
            guidance: file.pick(self.guidance, "guidance", d.guidance_scale)?,
            backend: file.pick(self.backend.clone(), "backend", "toy".into())?,
            out: file.pick(self.out.clone(), "out", PathBuf::from("out"))?,
            dump_attn: file.pick(self.dump_attn, "dump-attn", false)?,
            no_protect: file.pick(self.no_protect, "no-protect", false)?,
            mask_from: file
                .pick_opt(self.mask_from.clone(), "mask-from")?
                .map(absolute)
                .transpose()?,
        })
    }
}

pub fn pipeline_config(steps: usize, ts: usize, s_ca: f32, s_sa: f32, guidance: f32, seed: u64) -> PipelineConfig {
    PipelineConfig {
        total_steps: steps,
        protection_steps: ts,
        guidance_scale: guidance,
        seed,
        extraction: ExtractionConfig {
            s_ca,
            s_sa,
            ..ExtractionConfig::default()
        },
        ..PipelineConfig::default()
    }
}

impl GenerateSettings {
    pub fn pipeline(&self) -> PipelineConfig {
        pipeline_config(self.steps, self.ts, self.s_ca, self.s_sa, self.guidance, self.seed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionSummary {
    pub concept: usize,
    pub surface: String,
    pub anchor_cells: usize,
    pub region_cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateReport {
    /// `extracted`, `mask-from` or `no-protect`.
    pub mode: &'static str,
    pub diagnostics: Diagnostics,
    pub regions: Vec<RegionSummary>,
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub manifest: RunManifest,
    pub report: GenerateReport,
    pub generation: Generation,
}

/// Regions saved by an earlier `--dump-attn` run of the same prompt.
pub fn stored_regions(path: &Path, prompt: &str) -> Result<RegionSet> {
    let container = Container::load(path)?;
    let stored_prompt = container.metadata.get("prompt").and_then(|p| p.as_str());
    if stored_prompt != Some(prompt) {
        return Err(CliError::Config(format!(
            "{} was recorded for prompt {:?}, not {prompt:?}",
            path.display(),
            stored_prompt.unwrap_or("")
        )));
    }
    let regions = container.masks(EntryKind::Region);
    let Some(grid) = regions.first().map(|m| m.grid()) else {
        return Err(CliError::MissingRecord(format!(
            "{} holds no concept regions",
            path.display()
        )));
    };
    let concept_indices: Vec<usize> = container
        .metadata
        .get("concept_indices")
        .cloned()
        .map(serde_json::from_value::<Option<Vec<usize>>>)
        .transpose()?
        .flatten()
        .ok_or_else(|| CliError::MissingRecord(format!("{} has no concept indices", path.display())))?;
    Ok(RegionSet {
        grid,
        anchors: container.masks(EntryKind::Anchor),
        regions,
        concept_indices,
    })
}

fn plain(
    prompt: &str,
    cfg: &PipelineConfig,
    backend: &dyn spdiffusion::pipeline::DenoiserBackend,
) -> Result<Generation> {
    let prepared = prepare(backend, prompt)?;
    let output = run_plain(cfg, &prepared, backend)?;
    Ok(Generation {
        noise: initial_noise(backend, cfg.seed),
        diagnostics: Diagnostics {
            protection_active: false,
            skipped_because: Some("--no-protect".into()),
            concept_count: prepared.parsed.concept_count(),
            backend_steps: cfg.total_steps,
            mask_table: String::new(),
        },
        prepared,
        output,
        records: Vec::new(),
        extraction: None,
        sp_mask: None,
    })
}

pub fn cmd_generate(s: &GenerateSettings) -> Result<GenerateOutcome> {
    let backend = resolve_backend(&s.backend)?;
    let cfg = s.pipeline();
    cfg.validate()?;

    let (mode, generation, regions) = if s.no_protect {
        ("no-protect", plain(&s.prompt, &cfg, &*backend)?, None)
    } else if let Some(path) = &s.mask_from {
        let prepared = prepare(&*backend, &s.prompt)?;
        let regions = stored_regions(path, &s.prompt)?;
        let mask = build_sp_mask(&regions, &prepared.parsed)?;
        (
            "mask-from",
            generate_with_mask(prepared, &cfg, &*backend, mask)?,
            Some(regions),
        )
    } else {
        let g = generate_prepared(prepare(&*backend, &s.prompt)?, &cfg, &*backend)?;
        let r = g.regions().cloned();
        ("extracted", g, r)
    };

    fs::create_dir_all(&s.out).map_err(CliError::file(&s.out))?;
    let mut files = vec![
        IMAGE_FILE.to_string(),
        MASK_FILE.to_string(),
        DIAGNOSTICS_FILE.to_string(),
    ];
    fs::write(s.out.join(IMAGE_FILE), encode_png(&generation.output.image)?)?;
    let table = match (
        &generation.diagnostics.skipped_because,
        generation.diagnostics.mask_table.as_str(),
    ) {
        (Some(why), _) => format!("no protected regions: {why}\n"),
        (None, "") => "no protected regions\n".to_string(),
        (None, t) => t.to_string(),
    };
    fs::write(s.out.join(MASK_FILE), table)?;

    let parsed = &generation.prepared.parsed;
    let report = GenerateReport {
        mode,
        diagnostics: generation.diagnostics.clone(),
        regions: regions
            .iter()
            .flat_map(|r| {
                r.regions
                    .iter()
                    .zip(&r.anchors)
                    .zip(&r.concept_indices)
                    .map(|((region, anchor), &k)| RegionSummary {
                        concept: k,
                        surface: parsed
                            .concepts
                            .iter()
                            .find(|c| c.index == k)
                            .map_or_else(String::new, |c| c.concept.surface.clone()),
                        anchor_cells: anchor.count(),
                        region_cells: region.count(),
                    })
            })
            .collect(),
    };
    fs::write(s.out.join(DIAGNOSTICS_FILE), serde_json::to_string_pretty(&report)?)?;

    if s.dump_attn {
        let mut container = Container::from_generation(&generation, false);
        if generation.extraction.is_none() {
            if let Some(r) = &regions {
                container.push_regions(r);
                container.metadata["concept_indices"] = serde_json::json!(r.concept_indices);
            }
        }
        container.save(&s.out.join(CONTAINER_FILE))?;
        files.push(CONTAINER_FILE.to_string());
    }

    let manifest = RunManifest::record(
        Invocation::Generate(s.clone()),
        vec![s.prompt.clone()],
        vec![s.seed],
        &files,
    )?;
    Ok(GenerateOutcome {
        manifest,
        report,
        generation,
    })
}

//! Threshold sweep: SP-Extraction against direct cross-attention
//! thresholding.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spdiffusion::attention::AttentionRecord;
use spdiffusion::extraction::{extract, extract_cross_only, ExtractionConfig, RegionSet};
use spdiffusion::pipeline::{pass1_record, prepare, DenoiserBackend, Pass1, PipelineConfig, PreparedPrompt};
use spdiffusion::prompt::ParsedPrompt;

use crate::error::Result;
use crate::evaluate::{generate_with_regions, region_image, Generated};
use crate::scenario::Scenario;
use crate::scorer::{internvl_score, Evidence, ScorerClient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Anchors at a fixed cross-attention threshold, the swept value
    /// thresholds the cross-normalized self-attention.
    SpExtraction,
    /// The swept value thresholds the concept cross-attention column.
    CrossAttnOnly,
}

impl SweepMode {
    pub const ALL: [SweepMode; 2] = [SweepMode::SpExtraction, SweepMode::CrossAttnOnly];

    pub fn slug(self) -> &'static str {
        match self {
            SweepMode::SpExtraction => "sp_extraction",
            SweepMode::CrossAttnOnly => "cross_attn_only",
        }
    }
}

/// Regions for one mode and swept threshold.
pub fn regions_for(
    mode: SweepMode,
    records: &[AttentionRecord],
    parsed: &ParsedPrompt,
    base: &ExtractionConfig,
    threshold: f32,
) -> Result<RegionSet> {
    Ok(match mode {
        SweepMode::SpExtraction => extract(
            records,
            parsed,
            &ExtractionConfig {
                s_sa: threshold,
                ..base.clone()
            },
        )?,
        SweepMode::CrossAttnOnly => extract_cross_only(records, parsed, base, threshold)?,
    })
}

#[derive(Debug, Clone)]
pub struct PromptCase {
    pub id: String,
    pub prepared: PreparedPrompt,
    pub seed: u64,
    pub pass1: Pass1,
    /// Regions at the base thresholds; binding is judged here.
    pub reference: RegionSet,
}

impl PromptCase {
    pub fn new<B: DenoiserBackend + ?Sized>(
        id: String,
        prompt: &str,
        seed: u64,
        cfg: &PipelineConfig,
        backend: &B,
    ) -> Result<Self> {
        let prepared = prepare(backend, prompt)?;
        let cfg = PipelineConfig { seed, ..cfg.clone() };
        let pass1 = pass1_record(&cfg, &prepared, backend)?;
        let reference = extract(&pass1.records, &prepared.parsed, &cfg.extraction)?;
        Ok(Self {
            id,
            prepared,
            seed,
            pass1,
            reference,
        })
    }
}

#[derive(Debug, Clone)]
pub enum SweepCase {
    Scenario(Box<Scenario>),
    Prompt(Box<PromptCase>),
}

impl SweepCase {
    pub fn id(&self) -> String {
        match self {
            SweepCase::Scenario(s) => format!("scenario-{}", s.config.seed),
            SweepCase::Prompt(p) => p.id.clone(),
        }
    }
}

pub struct SweepContext<'a> {
    pub backend: &'a dyn DenoiserBackend,
    pub pipeline: PipelineConfig,
    pub scorer: &'a dyn ScorerClient,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepItem {
    pub case: String,
    pub mode: SweepMode,
    pub threshold: f32,
    pub score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mode: SweepMode,
    pub threshold: f32,
    /// Mean InternVL-style score (0-100) over scored cases.
    pub score: f64,
    pub scored: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub anchor_threshold: f32,
    pub points: Vec<SweepPoint>,
    pub items: Vec<SweepItem>,
}

impl SweepReport {
    /// `(threshold, score)` pairs of one mode in sweep order.
    pub fn curve(&self, mode: SweepMode) -> Vec<(f32, f64)> {
        self.points
            .iter()
            .filter(|p| p.mode == mode)
            .map(|p| (p.threshold, p.score))
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10}", "threshold");
        let modes: Vec<SweepMode> = SweepMode::ALL
            .into_iter()
            .filter(|m| self.points.iter().any(|p| p.mode == *m))
            .collect();
        for m in &modes {
            let _ = write!(out, " {:>16}", m.slug());
        }
        out.push('\n');
        let mut thresholds: Vec<f32> = self.points.iter().map(|p| p.threshold).collect();
        thresholds.sort_by(f32::total_cmp);
        thresholds.dedup();
        for t in thresholds {
            let _ = write!(out, "{t:<10.2}");
            for m in &modes {
                match self.points.iter().find(|p| p.mode == *m && p.threshold == t) {
                    Some(p) => {
                        let _ = write!(out, " {:>16.2}", p.score);
                    }
                    None => {
                        let _ = write!(out, " {:>16}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn score_case(case: &SweepCase, mode: SweepMode, threshold: f32, ctx: &SweepContext<'_>) -> Result<f64> {
    let base = &ctx.pipeline.extraction;
    match case {
        SweepCase::Scenario(sc) => {
            let regions = regions_for(mode, &sc.records, &sc.parsed, base, threshold)?;
            let evidence = Evidence::Regions {
                predicted: regions.regions.clone(),
                truth: sc.truth.clone(),
            };
            let image = region_image(sc.grid, &regions.regions);
            Ok(internvl_score(ctx.scorer, &image, &sc.parsed.raw, Some(&evidence))?.score)
        }
        SweepCase::Prompt(pc) => {
            let regions = regions_for(mode, &pc.pass1.records, &pc.prepared.parsed, base, threshold)?;
            let cfg = PipelineConfig {
                seed: pc.seed,
                ..ctx.pipeline.clone()
            };
            let Generated { image, evidence } = generate_with_regions(
                &pc.prepared,
                &cfg,
                ctx.backend,
                &pc.pass1.records,
                &pc.pass1.noise,
                &regions,
                &pc.reference,
            )?;
            Ok(internvl_score(ctx.scorer, &image, &pc.prepared.parsed.raw, evidence.as_ref())?.score)
        }
    }
}

/// Scores every case at every `(mode, threshold)` on a bounded worker
/// pool, then averages per curve point. Failed items are counted, not
/// averaged.
pub fn threshold_sweep(
    cases: &[SweepCase],
    thresholds: &[f32],
    modes: &[SweepMode],
    ctx: &SweepContext<'_>,
) -> Result<SweepReport> {
    let mut jobs = Vec::new();
    for &mode in modes {
        for &t in thresholds {
            for case in cases {
                jobs.push((mode, t, case));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers.max(1))
        .build()
        .map_err(|e| spdiffusion::Error::Backend(e.to_string()))?;
    let items: Vec<SweepItem> = pool.install(|| {
        jobs.par_iter()
            .map(|&(mode, threshold, case)| {
                let result = score_case(case, mode, threshold, ctx);
                SweepItem {
                    case: case.id(),
                    mode,
                    threshold,
                    score: result.as_ref().ok().copied(),
                    error: result.err().map(|e| e.to_string()),
                }
            })
            .collect()
    });

    let mut points = Vec::new();
    for &mode in modes {
        for &threshold in thresholds {
            let here: Vec<&SweepItem> = items
                .iter()
                .filter(|i| i.mode == mode && i.threshold == threshold)
                .collect();
            let scores: Vec<f64> = here.iter().filter_map(|i| i.score).collect();
            points.push(SweepPoint {
                mode,
                threshold,
                score: if scores.is_empty() {
                    f64::NAN
                } else {
                    scores.iter().sum::<f64>() / scores.len() as f64
                },
                scored: scores.len(),
                failed: here.len() - scores.len(),
            });
        }
    }
    Ok(SweepReport {
        anchor_threshold: ctx.pipeline.extraction.s_ca,
        points,
        items,
    })
}

/// `0.1, 0.2, ..., 0.9`.
pub fn default_thresholds() -> Vec<f32> {
    (1..=9).map(|i| i as f32 / 10.0).collect()
}

//! The two-pass protected generation.
//!
//! Pass 1 denoises the first `T_s` steps from seeded noise and records every
//! layer's attention. Regions are extracted from those records and turned
//! into an SP mask. Pass 2 restarts from the *same* noise and runs all `T`
//! steps with the mask on conditional cross-attention; during its first
//! `T_s` steps the recorded self-attention maps replace the computed ones.
//! A generation therefore costs `T + T_s` backend calls.

mod hooks;
mod scheduler;
mod toy;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attention::AttentionRecord;
use crate::error::{Error, Result};
use crate::extraction::{extract_detailed, Extraction, ExtractionConfig, RegionSet};
use crate::grid::Grid;
use crate::prompt::{map_to_tokens, parse_prompt, ParsedPrompt, Token};
use crate::protect::{build_sp_mask, SpMask};

pub use hooks::{AttentionHooks, Branch, NoHooks, ProtectionHooks, Recorder, Site};
pub use scheduler::DdimScheduler;
pub use toy::{ToyConfig, ToyDenoiser};

/// One attention layer of a backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub id: usize,
    pub grid: Grid,
    pub heads: usize,
}

/// Text conditioning for both guidance branches.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub cond: Array2<f32>,
    pub uncond: Array2<f32>,
}

/// Row-major RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// A noise-prediction network with hookable attention sites.
///
/// `predict` runs one guided denoising evaluation (both branches) and must
/// be deterministic in its inputs. Every self- and cross-attention call is
/// reported to `hooks` with its [`Site`].
pub trait DenoiserBackend: Send + Sync {
    fn name(&self) -> &str;
    fn latent_grid(&self) -> Grid;
    fn latent_channels(&self) -> usize;
    fn layers(&self) -> Vec<LayerInfo>;
    fn tokenize(&self, prompt: &str) -> Vec<Token>;
    fn encode(&self, tokens: &[Token]) -> Array2<f32>;
    fn predict(
        &self,
        latent: &Array2<f32>,
        cond: &Conditioning,
        step: usize,
        timestep: usize,
        guidance: f32,
        hooks: &mut dyn AttentionHooks,
    ) -> Result<Array2<f32>>;
    fn decode(&self, latent: &Array2<f32>) -> Image;
}

/// Which pass-2 attention maps to keep for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TracePolicy {
    #[default]
    None,
    FinalStep,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub total_steps: usize,
    pub protection_steps: usize,
    pub guidance_scale: f32,
    pub seed: u64,
    pub extraction: ExtractionConfig,
    /// Nominal output size; the toy backend decodes at latent resolution.
    pub image_size: (usize, usize),
    /// Blocks that receive the SP mask; `None` means every block.
    pub protect_blocks: Option<Vec<usize>>,
    pub trace: TracePolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            total_steps: 20,
            protection_steps: 2,
            guidance_scale: 7.5,
            seed: 0,
            extraction: ExtractionConfig::default(),
            image_size: (768, 768),
            protect_blocks: None,
            trace: TracePolicy::None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.protection_steps > self.total_steps {
            return Err(Error::Config(format!(
                "protection_steps {} exceeds total_steps {}",
                self.protection_steps, self.total_steps
            )));
        }
        self.extraction.validate()
    }
}

/// A prompt parsed, aligned to the backend's tokens and encoded.
#[derive(Debug, Clone)]
pub struct PreparedPrompt {
    pub parsed: ParsedPrompt,
    pub tokens: Vec<Token>,
    pub conditioning: Conditioning,
}

pub fn prepare<B: DenoiserBackend + ?Sized>(backend: &B, prompt: &str) -> Result<PreparedPrompt> {
    prepare_parsed(backend, &parse_prompt(prompt))
}

/// Aligns word-level spans to the backend's tokenization and encodes both
/// branches (the unconditional branch uses the empty prompt).
pub fn prepare_parsed<B: DenoiserBackend + ?Sized>(backend: &B, parsed: &ParsedPrompt) -> Result<PreparedPrompt> {
    let tokens = backend.tokenize(&parsed.raw);
    let aligned = map_to_tokens(parsed, &tokens)?;
    let uncond_tokens = backend.tokenize("");
    Ok(PreparedPrompt {
        parsed: aligned,
        conditioning: Conditioning {
            cond: backend.encode(&tokens),
            uncond: backend.encode(&uncond_tokens),
        },
        tokens,
    })
}

/// Seeded standard-normal starting latent.
pub fn initial_noise<B: DenoiserBackend + ?Sized>(backend: &B, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((backend.latent_grid().len(), backend.latent_channels()), || {
        let v: f32 = StandardNormal.sample(&mut rng);
        v
    })
}

/// Runs `steps` denoising iterations from `start`; returns the latent.
fn denoise<B: DenoiserBackend + ?Sized>(
    backend: &B,
    cfg: &PipelineConfig,
    prepared: &PreparedPrompt,
    start: &Array2<f32>,
    steps: usize,
    hooks: &mut dyn AttentionHooks,
) -> Result<Array2<f32>> {
    let scheduler = DdimScheduler::for_steps(cfg.total_steps);
    let mut latent = start.clone();
    for (step, &t) in scheduler.timesteps().iter().enumerate().take(steps) {
        let eps = backend.predict(&latent, &prepared.conditioning, step, t, cfg.guidance_scale, hooks)?;
        latent = scheduler.step(&eps, t, &latent);
    }
    Ok(latent)
}

/// Output of the recording pass.
#[derive(Debug, Clone)]
pub struct Pass1 {
    pub records: Vec<AttentionRecord>,
    pub noise: Array2<f32>,
}

/// Denoises the first `T_s` steps and records conditional attention at
/// every layer.
pub fn pass1_record<B: DenoiserBackend + ?Sized>(
    cfg: &PipelineConfig,
    prepared: &PreparedPrompt,
    backend: &B,
) -> Result<Pass1> {
    cfg.validate()?;
    let noise = initial_noise(backend, cfg.seed);
    let mut recorder = Recorder::new(None, true);
    denoise(backend, cfg, prepared, &noise, cfg.protection_steps, &mut recorder)?;
    Ok(Pass1 {
        records: recorder.finish()?,
        noise,
    })
}

/// Output of a full denoising run.
#[derive(Debug, Clone)]
pub struct Denoised {
    pub latent: Array2<f32>,
    pub image: Image,
    /// Conditional attention observed during the run, per [`TracePolicy`].
    pub trace: Vec<AttentionRecord>,
}

fn trace_recorder(cfg: &PipelineConfig) -> Option<Recorder> {
    match cfg.trace {
        TracePolicy::None => None,
        TracePolicy::FinalStep => Some(Recorder::new(Some(cfg.total_steps - 1..cfg.total_steps), false)),
        TracePolicy::All => Some(Recorder::new(None, false)),
    }
}

/// Full `T`-step run from `noise` with the SP mask on cross-attention and
/// the stored self-attention replayed for the first `T_s` steps.
pub fn pass2_protected<B: DenoiserBackend + ?Sized>(
    cfg: &PipelineConfig,
    prepared: &PreparedPrompt,
    backend: &B,
    sp_mask: &SpMask,
    records: &[AttentionRecord],
    noise: &Array2<f32>,
) -> Result<Denoised> {
    cfg.validate()?;
    let mut hooks = ProtectionHooks {
        sp_mask: Some(sp_mask),
        blocks: cfg.protect_blocks.as_deref(),
        stored: records,
        replace_until: cfg.protection_steps,
        trace: trace_recorder(cfg),
    };
    let latent = denoise(backend, cfg, prepared, noise, cfg.total_steps, &mut hooks)?;
    let trace = hooks.trace.map(Recorder::finish).transpose()?.unwrap_or_default();
    Ok(Denoised {
        image: backend.decode(&latent),
        latent,
        trace,
    })
}

/// Plain `T`-step generation without any intervention.
pub fn run_plain<B: DenoiserBackend + ?Sized>(
    cfg: &PipelineConfig,
    prepared: &PreparedPrompt,
    backend: &B,
) -> Result<Denoised> {
    cfg.validate()?;
    let noise = initial_noise(backend, cfg.seed);
    let latent;
    let trace = match trace_recorder(cfg) {
        Some(mut rec) => {
            latent = denoise(backend, cfg, prepared, &noise, cfg.total_steps, &mut rec)?;
            rec.finish()?
        }
        None => {
            latent = denoise(backend, cfg, prepared, &noise, cfg.total_steps, &mut NoHooks)?;
            Vec::new()
        }
    };
    Ok(Denoised {
        image: backend.decode(&latent),
        latent,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub protection_active: bool,
    /// Why protection was skipped, when it was.
    pub skipped_because: Option<String>,
    pub concept_count: usize,
    /// Denoising iterations issued to the backend.
    pub backend_steps: usize,
    pub mask_table: String,
}

/// Everything one generation produced.
#[derive(Debug, Clone)]
pub struct Generation {
    pub prepared: PreparedPrompt,
    pub noise: Array2<f32>,
    pub output: Denoised,
    pub records: Vec<AttentionRecord>,
    pub extraction: Option<Extraction>,
    pub sp_mask: Option<SpMask>,
    pub diagnostics: Diagnostics,
}

impl Generation {
    pub fn regions(&self) -> Option<&RegionSet> {
        self.extraction.as_ref().map(|e| &e.regions)
    }
}

fn plain_generation<B: DenoiserBackend + ?Sized>(
    cfg: &PipelineConfig,
    prepared: PreparedPrompt,
    backend: &B,
    reason: String,
) -> Result<Generation> {
    let output = run_plain(cfg, &prepared, backend)?;
    Ok(Generation {
        noise: initial_noise(backend, cfg.seed),
        diagnostics: Diagnostics {
            protection_active: false,
            skipped_because: Some(reason),
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

/// Parse, record, extract, mask, protect.
///
/// Prompts with at most one concept, and runs with `T_s = 0` (nothing to
/// extract from), fall back to a plain run; the diagnostics say so.
pub fn generate<B: DenoiserBackend + ?Sized>(prompt: &str, cfg: &PipelineConfig, backend: &B) -> Result<Generation> {
    generate_prepared(prepare(backend, prompt)?, cfg, backend)
}

pub fn generate_prepared<B: DenoiserBackend + ?Sized>(
    prepared: PreparedPrompt,
    cfg: &PipelineConfig,
    backend: &B,
) -> Result<Generation> {
    cfg.validate()?;
    let n = prepared.parsed.concept_count();
    if n <= 1 {
        return plain_generation(cfg, prepared, backend, format!("{n} concept(s) in prompt"));
    }
    if cfg.protection_steps == 0 {
        return plain_generation(cfg, prepared, backend, "no recorded steps (T_s = 0)".into());
    }

    let pass1 = pass1_record(cfg, &prepared, backend)?;
    let extraction = extract_detailed(&pass1.records, &prepared.parsed, &cfg.extraction)?;
    let sp_mask = build_sp_mask(&extraction.regions, &prepared.parsed)?;
    let output = pass2_protected(cfg, &prepared, backend, &sp_mask, &pass1.records, &pass1.noise)?;
    Ok(Generation {
        diagnostics: Diagnostics {
            protection_active: true,
            skipped_because: None,
            concept_count: n,
            backend_steps: cfg.protection_steps + cfg.total_steps,
            mask_table: sp_mask.describe(&prepared.parsed.token_surfaces()),
        },
        noise: pass1.noise,
        records: pass1.records,
        extraction: Some(extraction),
        sp_mask: Some(sp_mask),
        output,
        prepared,
    })
}

/// Protected generation with a caller-supplied mask instead of extraction.
/// Self-attention is still replayed for the first `T_s` steps.
pub fn generate_with_mask<B: DenoiserBackend + ?Sized>(
    prepared: PreparedPrompt,
    cfg: &PipelineConfig,
    backend: &B,
    sp_mask: SpMask,
) -> Result<Generation> {
    cfg.validate()?;
    let pass1 = pass1_record(cfg, &prepared, backend)?;
    let output = pass2_protected(cfg, &prepared, backend, &sp_mask, &pass1.records, &pass1.noise)?;
    Ok(Generation {
        diagnostics: Diagnostics {
            protection_active: !sp_mask.is_zero(),
            skipped_because: None,
            concept_count: prepared.parsed.concept_count(),
            backend_steps: cfg.protection_steps + cfg.total_steps,
            mask_table: sp_mask.describe(&prepared.parsed.token_surfaces()),
        },
        noise: pass1.noise,
        records: pass1.records,
        extraction: None,
        sp_mask: Some(sp_mask),
        output,
        prepared,
    })
}

//! Generation plus scoring evidence for one prompt and seed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use spdiffusion::attention::AttentionRecord;
use spdiffusion::extraction::{extract, RegionSet};
use spdiffusion::pipeline::{
    generate_prepared, pass1_record, pass2_protected, DenoiserBackend, Image, PipelineConfig, PreparedPrompt,
    TracePolicy,
};
use spdiffusion::protect::SpMask;
use spdiffusion::{Error, Grid};

use crate::error::Result;
use crate::scorer::Evidence;

/// A row of the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Plain sampling on the same backend.
    Baseline,
    SpDiffusion,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Baseline, Method::SpDiffusion];

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::SpDiffusion => "SPDiffusion",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::SpDiffusion => "spdiffusion",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> spdiffusion::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(Method::Baseline),
            "spdiffusion" | "sp-diffusion" => Ok(Method::SpDiffusion),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub image: Image,
    pub evidence: Option<Evidence>,
}

/// Binding evidence read from the final-step cross-attention at the
/// reference regions' resolution (falling back to the first traced layer).
pub fn binding_evidence(
    trace: &[AttentionRecord],
    reference: &RegionSet,
    prepared: &PreparedPrompt,
) -> Option<Evidence> {
    let last = trace.iter().map(|r| r.step).max()?;
    let finals: Vec<&AttentionRecord> = trace.iter().filter(|r| r.step == last).collect();
    let record = finals
        .iter()
        .find(|r| r.grid() == reference.grid)
        .or_else(|| finals.first())?;
    Some(Evidence::Binding {
        cross: record.cross.clone(),
        regions: reference.regions.clone(),
        parsed: prepared.parsed.clone(),
    })
}

fn traced(cfg: &PipelineConfig) -> PipelineConfig {
    PipelineConfig {
        trace: TracePolicy::FinalStep,
        ..cfg.clone()
    }
}

/// Runs `method` and collects the image and stub evidence. The evidence
/// regions come from pass-1 extraction at `cfg`'s thresholds for both
/// methods, so both are judged in the same places.
pub fn generate_for_scoring<B: DenoiserBackend + ?Sized>(
    method: Method,
    prepared: &PreparedPrompt,
    cfg: &PipelineConfig,
    backend: &B,
) -> Result<Generated> {
    let cfg = traced(cfg);
    match method {
        Method::SpDiffusion => {
            let g = generate_prepared(prepared.clone(), &cfg, backend)?;
            let evidence = g.regions().and_then(|r| binding_evidence(&g.output.trace, r, prepared));
            Ok(Generated {
                image: g.output.image,
                evidence,
            })
        }
        Method::Baseline => {
            let pass1 = pass1_record(&cfg, prepared, backend)?;
            let reference = if prepared.parsed.concept_count() >= 2 && !pass1.records.is_empty() {
                Some(extract(&pass1.records, &prepared.parsed, &cfg.extraction)?)
            } else {
                None
            };
            let zero = SpMask::zeros(backend.latent_grid(), prepared.tokens.len());
            let out = pass2_protected(&cfg, prepared, backend, &zero, &pass1.records, &pass1.noise)?;
            let evidence = reference.and_then(|r| binding_evidence(&out.trace, &r, prepared));
            Ok(Generated {
                image: out.image,
                evidence,
            })
        }
    }
}

/// Protected generation with caller-chosen regions; evidence is read in
/// `reference`.
pub fn generate_with_regions<B: DenoiserBackend + ?Sized>(
    prepared: &PreparedPrompt,
    cfg: &PipelineConfig,
    backend: &B,
    records: &[AttentionRecord],
    noise: &ndarray::Array2<f32>,
    regions: &RegionSet,
    reference: &RegionSet,
) -> Result<Generated> {
    let cfg = traced(cfg);
    let mask = spdiffusion::protect::build_sp_mask(regions, &prepared.parsed)?;
    let out = pass2_protected(&cfg, prepared, backend, &mask, records, noise)?;
    Ok(Generated {
        evidence: binding_evidence(&out.trace, reference, prepared),
        image: out.image,
    })
}

/// A label image of regions: one flat color per concept, black elsewhere.
pub fn region_image(grid: Grid, regions: &[spdiffusion::Mask]) -> Image {
    const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40]];
    let mut pixels = vec![0u8; grid.len() * 3];
    for (k, m) in regions.iter().enumerate() {
        for p in m.positions() {
            pixels[3 * p..3 * p + 3].copy_from_slice(&PALETTE[k % PALETTE.len()]);
        }
    }
    Image {
        width: grid.w,
        height: grid.h,
        pixels,
    }
}

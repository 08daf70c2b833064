use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use spdiffusion::attention::{aggregate, AttnKind, AttnMap};
use spdiffusion::dump::Container;
use spdiffusion::extraction::{
    anchor_attention, concept_column, threshold_with_fallback, AnchorNormalization, ExtractionConfig,
};
use spdiffusion::prompt::{ConceptSpan, ParsedPrompt};
use spdiffusion::{Grid, Mask};

use crate::error::{CliError, Result};
use crate::generate::absolute;
use crate::manifest::{Invocation, RunManifest};
use crate::render::{components, heatmap, overlay, Legend};

pub const INSPECT_FILE: &str = "inspect.json";

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    /// Container written by `generate --dump-attn`, or a scenario container
    pub container: PathBuf,
    /// 1-based concept to render; all concepts when omitted
    #[arg(long)]
    pub concept: Option<usize>,
    /// Cut-off on the per-concept normalized cross-attention column
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f32,
    #[arg(long, default_value = "inspect")]
    pub out: PathBuf,
    /// Pixels per latent cell
    #[arg(long, default_value_t = 16)]
    pub scale: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectSettings {
    pub container: PathBuf,
    pub concept: Option<usize>,
    pub threshold: f32,
    pub out: PathBuf,
    pub scale: u32,
}

impl InspectArgs {
    pub fn resolve(&self) -> Result<InspectSettings> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(CliError::Config(format!(
                "--threshold {} is outside (0, 1]",
                self.threshold
            )));
        }
        Ok(InspectSettings {
            container: absolute(self.container.clone())?,
            concept: self.concept,
            threshold: self.threshold,
            out: self.out.clone(),
            scale: self.scale,
        })
    }
}

/// What was rendered for one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptView {
    pub concept: usize,
    pub surface: String,
    pub grid: Grid,
    /// Range of the aggregated cross-attention column (before per-concept
    /// normalization), as rendered in `concept<k>_cross.png`.
    pub cross: Legend,
    /// Range of the mean self-attention toward the anchor points, as
    /// rendered in `concept<k>_self.png`.
    pub self_attn: Legend,
    /// Cells whose normalized column passes the threshold.
    pub points: usize,
    pub components: usize,
    pub anchor_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectSummary {
    pub prompt: String,
    pub threshold: f32,
    pub records: usize,
    pub concepts: Vec<ConceptView>,
}

#[derive(Debug, Clone)]
pub struct InspectOutcome {
    pub manifest: RunManifest,
    pub summary: InspectSummary,
}

/// Maps computed for one concept at one threshold.
#[derive(Debug, Clone)]
pub struct ConceptMaps {
    pub cross: Vec<f32>,
    pub normalized: Vec<f32>,
    pub points: Mask,
    pub anchors: Mask,
    pub self_attn: Vec<f32>,
}

pub fn concept_maps(agg_cross: &AttnMap, agg_self: &AttnMap, concept: &ConceptSpan, threshold: f32) -> ConceptMaps {
    let grid = agg_cross.grid;
    let normalized = concept_column(agg_cross, concept, AnchorNormalization::PerColumn);
    let anchors = threshold_with_fallback(&normalized, threshold, grid);
    ConceptMaps {
        cross: concept_column(agg_cross, concept, AnchorNormalization::Global),
        points: Mask::from_fn(grid, |i| normalized[i] >= threshold),
        self_attn: anchor_attention(agg_self, &anchors),
        normalized,
        anchors,
    }
}

/// Aggregated cross and self maps of a container at the extraction grid.
pub fn container_aggregates(
    container: &Container,
    path: &std::path::Path,
) -> Result<(ParsedPrompt, AttnMap, AttnMap, usize)> {
    let parsed: ParsedPrompt = container
        .metadata
        .get("parsed")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .ok_or_else(|| CliError::MissingRecord(format!("{} has no parsed prompt in its metadata", path.display())))?;
    let records = container.records()?;
    if records.is_empty() {
        return Err(CliError::MissingRecord(format!(
            "{} holds no attention records",
            path.display()
        )));
    }
    let canonical = ExtractionConfig::default().canonical_for(&records)?;
    let cross = aggregate(&records, AttnKind::Cross, canonical, |r| r.grid() == canonical)?;
    let selfm = aggregate(&records, AttnKind::SelfAttn, canonical, |r| r.grid() == canonical)?;
    Ok((parsed, cross, selfm, records.len()))
}

pub fn cmd_inspect(s: &InspectSettings) -> Result<InspectOutcome> {
    let container = Container::load(&s.container)?;
    let (parsed, cross, selfm, records) = container_aggregates(&container, &s.container)?;
    let concepts: Vec<&ConceptSpan> = match s.concept {
        Some(k) => vec![parsed.concepts.iter().find(|c| c.index == k).ok_or_else(|| {
            CliError::MissingRecord(format!(
                "concept {k} is not in the prompt ({} concept(s))",
                parsed.concept_count()
            ))
        })?],
        None => parsed.concepts.iter().collect(),
    };
    if concepts.is_empty() {
        return Err(CliError::MissingRecord("the prompt has no concepts to render".into()));
    }

    fs::create_dir_all(&s.out).map_err(CliError::file(&s.out))?;
    let mut files = Vec::new();
    let mut views = Vec::new();
    for c in concepts {
        let maps = concept_maps(&cross, &selfm, c, s.threshold);
        let k = c.index;
        let (cross_img, cross_legend) = heatmap(&maps.cross, cross.grid, s.scale);
        let (self_img, self_legend) = heatmap(&maps.self_attn, cross.grid, s.scale);
        let points_img = overlay(&maps.normalized, &maps.points, s.scale);
        for (name, img) in [("cross", cross_img), ("self", self_img), ("points", points_img)] {
            let file = format!("concept{k}_{name}.png");
            img.save(s.out.join(&file))?;
            files.push(file);
        }
        views.push(ConceptView {
            concept: k,
            surface: c.concept.surface.clone(),
            grid: cross.grid,
            cross: cross_legend,
            self_attn: self_legend,
            points: maps.points.count(),
            components: components(&maps.points),
            anchor_cells: maps.anchors.count(),
        });
    }

    let summary = InspectSummary {
        prompt: parsed.raw.clone(),
        threshold: s.threshold,
        records,
        concepts: views,
    };
    fs::write(s.out.join(INSPECT_FILE), serde_json::to_string_pretty(&summary)?)?;
    files.push(INSPECT_FILE.to_string());
    let manifest = RunManifest::record(
        Invocation::Inspect(s.clone()),
        vec![parsed.raw.clone()],
        Vec::new(),
        &files,
    )?;
    Ok(InspectOutcome { manifest, summary })
}

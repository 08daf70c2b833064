//! Concept regions from the model's own attention.
//!
//! Aggregated cross-attention gives a few high-confidence *anchor* positions
//! per concept (high threshold). Aggregated self-attention, read at the
//! anchor columns, spreads each anchor set into a full region (low
//! threshold) after subtracting the competing concepts' maps.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::attention::{aggregate, AttentionRecord, AttnKind, AttnMap};
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::prompt::{ConceptSpan, ParsedPrompt};

/// How a concept's cross-attention column is scaled before anchor
/// thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorNormalization {
    /// Min-max the concept's own column again, so every concept reaches 1.
    #[default]
    PerColumn,
    /// Threshold the globally normalized aggregate as is.
    Global,
}

/// Which recorded layers feed the aggregates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSelection {
    /// Layers whose grid equals the canonical grid.
    #[default]
    CanonicalResolution,
    All,
    Layers(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    /// Anchor threshold on cross-attention.
    pub s_ca: f32,
    /// Region threshold on cross-normalized self-attention.
    pub s_sa: f32,
    pub anchor_normalization: AnchorNormalization,
    pub layers: LayerSelection,
    /// Recorded steps to aggregate; `None` takes every recorded step.
    pub steps: Option<Range<usize>>,
    /// Extraction grid; `None` picks the smallest recorded grid.
    pub canonical_grid: Option<Grid>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            s_ca: 0.9,
            s_sa: 0.2,
            anchor_normalization: AnchorNormalization::PerColumn,
            layers: LayerSelection::CanonicalResolution,
            steps: None,
            canonical_grid: None,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("s_ca", self.s_ca), ("s_sa", self.s_sa)] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Config(format!("{name} = {s} is outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// The grid extraction runs on for these records.
    pub fn canonical_for(&self, records: &[AttentionRecord]) -> Result<Grid> {
        if let Some(g) = self.canonical_grid {
            return Ok(g);
        }
        records
            .iter()
            .map(AttentionRecord::grid)
            .min_by_key(|g| (g.len(), g.w))
            .ok_or(Error::EmptySelection)
    }

    fn selects(&self, record: &AttentionRecord, canonical: Grid) -> bool {
        let step_ok = self.steps.as_ref().is_none_or(|r| r.contains(&record.step));
        let layer_ok = match &self.layers {
            LayerSelection::CanonicalResolution => record.grid() == canonical,
            LayerSelection::All => true,
            LayerSelection::Layers(ids) => ids.contains(&record.layer),
        };
        step_ok && layer_ok
    }
}

/// Per-concept anchor masks and disjoint concept regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub grid: Grid,
    pub anchors: Vec<Mask>,
    pub regions: Vec<Mask>,
    /// Concept index (1-based, as in [`ConceptSpan::index`]) of each entry.
    pub concept_indices: Vec<usize>,
}

impl RegionSet {
    pub fn empty(grid: Grid) -> Self {
        Self {
            grid,
            anchors: Vec::new(),
            regions: Vec::new(),
            concept_indices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// First pair of overlapping regions, if any.
    pub fn find_overlap(&self) -> Option<(usize, usize, usize)> {
        for i in 0..self.regions.len() {
            for j in i + 1..self.regions.len() {
                if let Some(p) = self.regions[i].positions().find(|&p| self.regions[j].get(p)) {
                    return Some((i, j, p));
                }
            }
        }
        None
    }

    /// Regions on another grid (nearest-neighbor).
    pub fn resample(&self, target: Grid) -> RegionSet {
        RegionSet {
            grid: target,
            anchors: self.anchors.iter().map(|m| m.resample(target)).collect(),
            regions: self.regions.iter().map(|m| m.resample(target)).collect(),
            concept_indices: self.concept_indices.clone(),
        }
    }
}

/// Intermediate maps of one extraction, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub regions: RegionSet,
    /// Per-concept cross-attention column used for anchor thresholding.
    pub concept_columns: Vec<Vec<f32>>,
    /// Per-concept self-attention toward its anchors, before cross-normalization.
    pub anchor_attention: Vec<Vec<f32>>,
    /// Per-concept cross-normalized self-attention.
    pub cross_normalized: Vec<Vec<f32>>,
}

/// The concept's cross-attention column: mean over its sub-word token
/// columns, re-normalized per `mode`.
pub fn concept_column(agg_cross: &AttnMap, concept: &ConceptSpan, mode: AnchorNormalization) -> Vec<f32> {
    let tokens = concept.concept.indices();
    let n = tokens.len() as f32;
    let mut column: Vec<f32> = (0..agg_cross.values.nrows())
        .map(|i| {
            let mut sum = 0.0f32;
            for t in tokens.clone() {
                sum += agg_cross.values[[i, t]];
            }
            sum / n
        })
        .collect();
    if mode == AnchorNormalization::PerColumn {
        crate::attention::minmax_norm_in_place(&mut column);
    }
    column
}

/// `values >= threshold`, or the first argmax position alone when nothing
/// passes.
pub fn threshold_with_fallback(values: &[f32], threshold: f32, grid: Grid) -> Mask {
    let mask = Mask::from_fn(grid, |i| values[i] >= threshold);
    if !mask.is_empty() {
        return mask;
    }
    let argmax = values
        .iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0;
    Mask::singleton(grid, argmax)
}

/// Anchor points of one concept: the positions of its (normalized)
/// cross-attention column at or above `s_ca`.
pub fn anchor_points(agg_cross: &AttnMap, concept: &ConceptSpan, s_ca: f32, mode: AnchorNormalization) -> Mask {
    threshold_with_fallback(&concept_column(agg_cross, concept, mode), s_ca, agg_cross.grid)
}

/// Every position's mean self-attention toward the anchor positions.
pub fn anchor_attention(agg_self: &AttnMap, anchors: &Mask) -> Vec<f32> {
    let cols: Vec<usize> = anchors.positions().collect();
    let n = cols.len() as f32;
    (0..agg_self.values.nrows())
        .map(|i| {
            let mut sum = 0.0f32;
            for &j in &cols {
                sum += agg_self.values[[i, j]];
            }
            sum / n
        })
        .collect()
}

/// Subtracts the mean of the other concepts' anchor attention, clamps at
/// zero and min-max normalizes. A lone concept is only normalized.
pub fn cross_normalize_vectors(per_concept: &[Vec<f32>]) -> Vec<Vec<f32>> {
    let n = per_concept.len();
    per_concept
        .iter()
        .enumerate()
        .map(|(k, own)| {
            let mut out = if n == 1 {
                own.clone()
            } else {
                let others = (n - 1) as f32;
                own.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let mut sum = 0.0f32;
                        for (j, other) in per_concept.iter().enumerate() {
                            if j != k {
                                sum += other[i];
                            }
                        }
                        (v - sum / others).max(0.0)
                    })
                    .collect()
            };
            crate::attention::minmax_norm_in_place(&mut out);
            out
        })
        .collect()
}

pub fn cross_normalize(agg_self: &AttnMap, anchors: &[Mask]) -> Vec<Vec<f32>> {
    let per_concept: Vec<Vec<f32>> = anchors.iter().map(|m| anchor_attention(agg_self, m)).collect();
    cross_normalize_vectors(&per_concept)
}

/// Assigns every position claimed by several masks to the claimant with the
/// largest score there; ties go to the lowest index.
pub fn resolve_overlaps(masks: &mut [Mask], scores: &[Vec<f32>]) {
    let Some(grid) = masks.first().map(Mask::grid) else {
        return;
    };
    for i in 0..grid.len() {
        let claimants: Vec<usize> = (0..masks.len()).filter(|&k| masks[k].get(i)).collect();
        if claimants.len() < 2 {
            continue;
        }
        let mut winner = claimants[0];
        for &k in &claimants[1..] {
            if scores[k][i] > scores[winner][i] {
                winner = k;
            }
        }
        for &k in &claimants {
            masks[k].set(i, k == winner);
        }
    }
}

/// Thresholds each cross-normalized vector at `s_sa` and makes the regions
/// pairwise disjoint.
pub fn concept_regions(cross_normed: &[Vec<f32>], s_sa: f32, grid: Grid) -> Vec<Mask> {
    let mut regions: Vec<Mask> = cross_normed
        .iter()
        .map(|v| Mask::from_fn(grid, |i| v[i] >= s_sa))
        .collect();
    resolve_overlaps(&mut regions, cross_normed);
    regions
}

fn aggregates(records: &[AttentionRecord], cfg: &ExtractionConfig) -> Result<(AttnMap, AttnMap)> {
    cfg.validate()?;
    let canonical = cfg.canonical_for(records)?;
    let cross = aggregate(records, AttnKind::Cross, canonical, |r| cfg.selects(r, canonical))?;
    let selfm = aggregate(records, AttnKind::SelfAttn, canonical, |r| cfg.selects(r, canonical))?;
    Ok((cross, selfm))
}

/// Full extraction with intermediate maps.
pub fn extract_detailed(
    records: &[AttentionRecord],
    parsed: &ParsedPrompt,
    cfg: &ExtractionConfig,
) -> Result<Extraction> {
    let (agg_cross, agg_self) = aggregates(records, cfg)?;
    let grid = agg_cross.grid;

    let concept_columns: Vec<Vec<f32>> = parsed
        .concepts
        .iter()
        .map(|c| concept_column(&agg_cross, c, cfg.anchor_normalization))
        .collect();
    let anchors: Vec<Mask> = concept_columns
        .iter()
        .map(|col| threshold_with_fallback(col, cfg.s_ca, grid))
        .collect();
    let anchor_attn: Vec<Vec<f32>> = anchors.iter().map(|m| anchor_attention(&agg_self, m)).collect();
    let cross_normalized = cross_normalize_vectors(&anchor_attn);

    let mut regions: Vec<Mask> = cross_normalized
        .iter()
        .zip(&anchors)
        .map(|(v, anchor)| {
            let region = Mask::from_fn(grid, |i| v[i] >= cfg.s_sa);
            if region.is_empty() {
                anchor.clone()
            } else {
                region
            }
        })
        .collect();
    resolve_overlaps(&mut regions, &cross_normalized);

    Ok(Extraction {
        regions: RegionSet {
            grid,
            anchors,
            regions,
            concept_indices: parsed.concepts.iter().map(|c| c.index).collect(),
        },
        concept_columns,
        anchor_attention: anchor_attn,
        cross_normalized,
    })
}

/// Concept regions from recorded attention.
pub fn extract(records: &[AttentionRecord], parsed: &ParsedPrompt, cfg: &ExtractionConfig) -> Result<RegionSet> {
    extract_detailed(records, parsed, cfg).map(|e| e.regions)
}

/// Baseline: regions straight from the concept's cross-attention column at
/// `threshold`, with the same overlap resolution.
pub fn extract_cross_only(
    records: &[AttentionRecord],
    parsed: &ParsedPrompt,
    cfg: &ExtractionConfig,
    threshold: f32,
) -> Result<RegionSet> {
    let (agg_cross, _) = aggregates(records, cfg)?;
    let grid = agg_cross.grid;
    let columns: Vec<Vec<f32>> = parsed
        .concepts
        .iter()
        .map(|c| concept_column(&agg_cross, c, cfg.anchor_normalization))
        .collect();
    let mut regions: Vec<Mask> = columns
        .iter()
        .map(|col| threshold_with_fallback(col, threshold, grid))
        .collect();
    resolve_overlaps(&mut regions, &columns);
    Ok(RegionSet {
        grid,
        anchors: regions.clone(),
        regions,
        concept_indices: parsed.concepts.iter().map(|c| c.index).collect(),
    })
}

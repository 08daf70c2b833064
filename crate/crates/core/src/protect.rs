//! The semantic-protection mask and protected cross-attention.
//!
//! Inside the region of concept `k`, the tokens of every other concept and
//! of their attributes get an additive `-inf` bias. Everything else (the
//! concept's own tokens, shared words, start/end tokens, and every position
//! outside all regions) keeps a zero bias.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::attention::{attention, MASKED};
use crate::error::{Error, Result};
use crate::extraction::RegionSet;
use crate::grid::{Grid, Mask};
use crate::prompt::ParsedPrompt;

/// One region and the token columns it may not attend to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskGroup {
    pub label: String,
    pub region: Mask,
    pub tokens: BTreeSet<usize>,
}

/// Additive `{0, MASKED}` mask of shape `(positions, tokens)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpMask {
    values: Array2<f32>,
    grid: Grid,
    token_count: usize,
    groups: Vec<MaskGroup>,
}

impl SpMask {
    /// All-zero mask.
    pub fn zeros(grid: Grid, token_count: usize) -> Self {
        Self {
            values: Array2::zeros((grid.len(), token_count)),
            grid,
            token_count,
            groups: Vec::new(),
        }
    }

    /// Builds the mask from explicit region/token groups. Regions must be
    /// pairwise disjoint and every token index below `token_count`.
    pub fn from_groups(grid: Grid, token_count: usize, groups: Vec<MaskGroup>) -> Result<Self> {
        for (i, g) in groups.iter().enumerate() {
            if g.region.grid() != grid {
                return Err(Error::ShapeMismatch(format!(
                    "region {} is on {}, mask grid is {grid}",
                    i + 1,
                    g.region.grid()
                )));
            }
            if let Some(&t) = g.tokens.iter().find(|&&t| t >= token_count) {
                return Err(Error::InvalidAssignment(format!(
                    "token {t} of region {} is out of range 0..{token_count}",
                    i + 1
                )));
            }
            for (j, other) in groups.iter().enumerate().skip(i + 1) {
                if let Some(p) = g.region.positions().find(|&p| other.region.get(p)) {
                    return Err(Error::Overlap {
                        first: i + 1,
                        second: j + 1,
                        position: p,
                    });
                }
            }
        }

        let mut values = Array2::<f32>::zeros((grid.len(), token_count));
        for g in &groups {
            for p in g.region.positions() {
                for &t in &g.tokens {
                    values[[p, t]] = MASKED;
                }
            }
        }
        let mask = Self {
            values,
            grid,
            token_count,
            groups,
        };
        if let Some(row) = mask.fully_masked_row() {
            return Err(Error::InvalidAssignment(format!("row {row} masks every token")));
        }
        Ok(mask)
    }

    pub fn values(&self) -> ArrayView2<'_, f32> {
        self.values.view()
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn groups(&self) -> &[MaskGroup] {
        &self.groups
    }

    pub fn is_masked(&self, position: usize, token: usize) -> bool {
        self.values[[position, token]] == MASKED
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn fully_masked_row(&self) -> Option<usize> {
        self.values
            .rows()
            .into_iter()
            .position(|row| row.iter().all(|&v| v == MASKED))
    }

    /// The same groups rebuilt on another latent grid. Region masks are
    /// resampled (nearest-neighbor); the dense matrix is rebuilt from them.
    pub fn at_grid(&self, target: Grid) -> Result<SpMask> {
        if target == self.grid {
            return Ok(self.clone());
        }
        let groups = self
            .groups
            .iter()
            .map(|g| MaskGroup {
                label: g.label.clone(),
                region: g.region.resample(target),
                tokens: g.tokens.clone(),
            })
            .collect();
        SpMask::from_groups(target, self.token_count, groups)
    }

    /// Same mask with the token groups of regions `a` and `b` exchanged.
    pub fn swap_tokens(&self, a: usize, b: usize) -> Result<SpMask> {
        let mut groups = self.groups.clone();
        let (ta, tb) = (groups[a].tokens.clone(), groups[b].tokens.clone());
        groups[a].tokens = tb;
        groups[b].tokens = ta;
        SpMask::from_groups(self.grid, self.token_count, groups)
    }

    /// Human-readable region → masked-token table.
    pub fn describe(&self, surfaces: &[(usize, String)]) -> String {
        let mut out = String::new();
        if self.groups.is_empty() {
            out.push_str("no protected regions\n");
        }
        for (i, g) in self.groups.iter().enumerate() {
            let _ = write!(
                out,
                "region {} {:?} ({} positions): masked",
                i + 1,
                g.label,
                g.region.count()
            );
            if g.tokens.is_empty() {
                out.push_str(" nothing");
            }
            for t in &g.tokens {
                let surface = surfaces
                    .iter()
                    .find(|(idx, _)| idx == t)
                    .map_or("?", |(_, s)| s.as_str());
                let _ = write!(out, " {t}:{surface:?}");
            }
            out.push('\n');
        }
        out
    }
}

/// The protection mask for extracted regions: rows of the region of
/// concept `k` mask the concept and attribute tokens of every other concept.
pub fn build_sp_mask(regions: &RegionSet, parsed: &ParsedPrompt) -> Result<SpMask> {
    if let Some((i, j, p)) = regions.find_overlap() {
        return Err(Error::Overlap {
            first: regions.concept_indices[i],
            second: regions.concept_indices[j],
            position: p,
        });
    }
    let groups = regions
        .regions
        .iter()
        .zip(&regions.concept_indices)
        .map(|(region, &index)| {
            let pos = parsed
                .concepts
                .iter()
                .position(|c| c.index == index)
                .ok_or_else(|| Error::InvalidAssignment(format!("region for unknown concept {index}")))?;
            Ok(MaskGroup {
                label: parsed.concepts[pos].concept.surface.clone(),
                region: region.clone(),
                tokens: parsed.foreign_tokens(pos),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SpMask::from_groups(regions.grid, parsed.token_count, groups)
}

/// Protected attention probabilities and the attended values.
#[derive(Debug, Clone)]
pub struct ProtectedOutput {
    pub probs: Array2<f32>,
    /// `probs · values`, before any output projection.
    pub attended: Array2<f32>,
}

/// `softmax((Q Kᵀ + M) / √d) · V` with `M` rebuilt on `layer_grid`.
pub fn protected_attention(
    queries: ArrayView2<'_, f32>,
    keys: ArrayView2<'_, f32>,
    values: ArrayView2<'_, f32>,
    sp_mask: &SpMask,
    layer_grid: Grid,
) -> Result<ProtectedOutput> {
    let mask = sp_mask.at_grid(layer_grid)?;
    if queries.nrows() != layer_grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} queries for a {layer_grid} grid",
            queries.nrows()
        )));
    }
    let probs = attention(queries, keys, queries.ncols(), Some(mask.values()))?;
    let attended = probs.dot(&values);
    Ok(ProtectedOutput { probs, attended })
}

//! Token-mask ablation: hand-assigned region/token groups instead of
//! extracted regions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use spdiffusion::pipeline::{
    pass1_record, pass2_protected, prepare, run_plain, Denoised, DenoiserBackend, PipelineConfig,
};
use spdiffusion::protect::{MaskGroup, SpMask};
use spdiffusion::{Error, Grid, Mask};

use crate::error::Result;

/// One region of the latent grid and the token columns it must not see.
/// The region is the union of `rect` (`[x0, y0, x1, y1]`, end-exclusive)
/// and `positions`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionAssignment {
    pub label: String,
    #[serde(default)]
    pub rect: Option<[usize; 4]>,
    #[serde(default)]
    pub positions: Vec<usize>,
    pub tokens: BTreeSet<usize>,
}

impl RegionAssignment {
    pub fn region(&self, grid: Grid) -> Result<Mask> {
        let mut mask = Mask::empty(grid);
        if let Some([x0, y0, x1, y1]) = self.rect {
            if x0 > x1 || y0 > y1 || x1 > grid.w || y1 > grid.h {
                return Err(
                    Error::InvalidAssignment(format!("{:?}: rect {:?} outside {grid}", self.label, self.rect)).into(),
                );
            }
            for y in y0..y1 {
                for x in x0..x1 {
                    mask.set(grid.index(x, y), true);
                }
            }
        }
        for &p in &self.positions {
            if p >= grid.len() {
                return Err(Error::InvalidAssignment(format!("{:?}: position {p} outside {grid}", self.label)).into());
            }
            mask.set(p, true);
        }
        Ok(mask)
    }
}

/// An ablation input file: a prompt, a seed and the assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub prompt: String,
    #[serde(default)]
    pub seed: u64,
    pub assignments: Vec<RegionAssignment>,
}

pub fn assignment_mask(grid: Grid, token_count: usize, assignments: &[RegionAssignment]) -> Result<SpMask> {
    let groups = assignments
        .iter()
        .map(|a| {
            Ok(MaskGroup {
                label: a.label.clone(),
                region: a.region(grid)?,
                tokens: a.tokens.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpMask::from_groups(grid, token_count, groups)?)
}

/// The assignments with the token groups of `a` and `b` exchanged.
pub fn swap_groups(assignments: &[RegionAssignment], a: usize, b: usize) -> Vec<RegionAssignment> {
    let mut out = assignments.to_vec();
    let tokens_a = out[a].tokens.clone();
    out[a].tokens = std::mem::replace(&mut out[b].tokens, tokens_a);
    out
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub output: Denoised,
    /// `None` when the assignment list was empty and a plain run was made.
    pub sp_mask: Option<SpMask>,
    pub mask_table: String,
    pub backend_steps: usize,
}

/// Generates `prompt` under a manual mask. Self-attention replay for the
/// first `T_s` steps is kept; an empty assignment list is a plain run.
pub fn token_mask_ablation<B: DenoiserBackend + ?Sized>(
    prompt: &str,
    assignments: &[RegionAssignment],
    cfg: &PipelineConfig,
    backend: &B,
) -> Result<AblationOutcome> {
    cfg.validate()?;
    let prepared = prepare(backend, prompt)?;
    if assignments.is_empty() {
        return Ok(AblationOutcome {
            output: run_plain(cfg, &prepared, backend)?,
            sp_mask: None,
            mask_table: "no protected regions\n".into(),
            backend_steps: cfg.total_steps,
        });
    }
    let mask = assignment_mask(backend.latent_grid(), prepared.tokens.len(), assignments)?;
    let pass1 = pass1_record(cfg, &prepared, backend)?;
    let output = pass2_protected(cfg, &prepared, backend, &mask, &pass1.records, &pass1.noise)?;
    let surfaces: Vec<(usize, String)> = prepared
        .tokens
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.chars.clone().map(|r| (i, prompt[r].to_string())))
        .collect();
    Ok(AblationOutcome {
        output,
        mask_table: mask.describe(&surfaces),
        sp_mask: Some(mask),
        backend_steps: cfg.protection_steps + cfg.total_steps,
    })
}

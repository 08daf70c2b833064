use std::collections::BTreeMap;

use ndarray::Array2;

use crate::attention::{apply_heads_mean, AttentionRecord, AttnKind, AttnMap};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::protect::SpMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Conditional,
    Unconditional,
}

/// One attention call inside the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Site {
    /// Denoising iteration, 0-based in execution order.
    pub step: usize,
    pub layer: usize,
    pub grid: Grid,
    pub branch: Branch,
}

/// Interception points a backend exposes at every attention site.
///
/// `observe_*` receives the per-head probabilities that were actually used,
/// after any override or mask.
pub trait AttentionHooks {
    fn cross_mask(&self, _site: &Site) -> Option<&SpMask> {
        None
    }

    fn self_override(&self, _site: &Site) -> Result<Option<&[Array2<f32>]>> {
        Ok(None)
    }

    fn observe_self(&mut self, _site: &Site, _heads: &[Array2<f32>]) {}

    fn observe_cross(&mut self, _site: &Site, _heads: &[Array2<f32>]) {}
}

/// No interception.
#[derive(Debug, Default)]
pub struct NoHooks;

impl AttentionHooks for NoHooks {}

#[derive(Default)]
struct Partial {
    grid: Option<Grid>,
    cross: Option<Array2<f32>>,
    self_mean: Option<Array2<f32>>,
    self_heads: Vec<Array2<f32>>,
}

/// Collects conditional-branch maps into [`AttentionRecord`]s.
#[derive(Default)]
pub struct Recorder {
    steps: Option<std::ops::Range<usize>>,
    keep_heads: bool,
    partial: BTreeMap<(usize, usize), Partial>,
}

impl Recorder {
    /// Records steps in `steps` (all steps when `None`). Per-head self maps
    /// are kept only with `keep_heads`.
    pub fn new(steps: Option<std::ops::Range<usize>>, keep_heads: bool) -> Self {
        Self {
            steps,
            keep_heads,
            partial: BTreeMap::new(),
        }
    }

    fn wants(&self, site: &Site) -> bool {
        site.branch == Branch::Conditional && self.steps.as_ref().is_none_or(|r| r.contains(&site.step))
    }

    pub fn observe_self(&mut self, site: &Site, heads: &[Array2<f32>]) {
        if !self.wants(site) {
            return;
        }
        let keep = self.keep_heads;
        let entry = self.partial.entry((site.step, site.layer)).or_default();
        entry.grid = Some(site.grid);
        entry.self_mean = apply_heads_mean(heads).ok();
        if keep {
            entry.self_heads = heads.to_vec();
        }
    }

    pub fn observe_cross(&mut self, site: &Site, heads: &[Array2<f32>]) {
        if !self.wants(site) {
            return;
        }
        let entry = self.partial.entry((site.step, site.layer)).or_default();
        entry.grid = Some(site.grid);
        entry.cross = apply_heads_mean(heads).ok();
    }

    /// Records ordered by (step, layer).
    pub fn finish(self) -> Result<Vec<AttentionRecord>> {
        self.partial
            .into_iter()
            .map(|((step, layer), p)| {
                let missing = |kind| Error::RecordMismatch { kind, step, layer };
                let grid = p.grid.ok_or_else(|| missing("any"))?;
                Ok(AttentionRecord {
                    step,
                    layer,
                    cross: AttnMap::new(p.cross.ok_or_else(|| missing("cross"))?, grid, AttnKind::Cross)?,
                    self_attn: AttnMap::new(p.self_mean.ok_or_else(|| missing("self"))?, grid, AttnKind::SelfAttn)?,
                    self_heads: p.self_heads,
                })
            })
            .collect()
    }
}

impl AttentionHooks for Recorder {
    fn observe_self(&mut self, site: &Site, heads: &[Array2<f32>]) {
        Recorder::observe_self(self, site, heads);
    }

    fn observe_cross(&mut self, site: &Site, heads: &[Array2<f32>]) {
        Recorder::observe_cross(self, site, heads);
    }
}

/// Protected denoising: the SP mask on every conditional cross-attention
/// site of the selected blocks, and stored self-attention replayed for
/// steps below `replace_until`.
pub struct ProtectionHooks<'a> {
    pub sp_mask: Option<&'a SpMask>,
    /// Blocks the mask applies to; `None` means all.
    pub blocks: Option<&'a [usize]>,
    pub stored: &'a [AttentionRecord],
    pub replace_until: usize,
    pub trace: Option<Recorder>,
}

impl AttentionHooks for ProtectionHooks<'_> {
    fn cross_mask(&self, site: &Site) -> Option<&SpMask> {
        let in_scope = self.blocks.is_none_or(|b| b.contains(&site.layer));
        (site.branch == Branch::Conditional && in_scope)
            .then_some(self.sp_mask)
            .flatten()
    }

    fn self_override(&self, site: &Site) -> Result<Option<&[Array2<f32>]>> {
        if site.branch != Branch::Conditional || site.step >= self.replace_until {
            return Ok(None);
        }
        self.stored
            .iter()
            .find(|r| r.step == site.step && r.layer == site.layer && !r.self_heads.is_empty())
            .map(|r| Some(r.self_heads.as_slice()))
            .ok_or(Error::RecordMismatch {
                kind: "self",
                step: site.step,
                layer: site.layer,
            })
    }

    fn observe_self(&mut self, site: &Site, heads: &[Array2<f32>]) {
        if let Some(t) = &mut self.trace {
            t.observe_self(site, heads);
        }
    }

    fn observe_cross(&mut self, site: &Site, heads: &[Array2<f32>]) {
        if let Some(t) = &mut self.trace {
            t.observe_cross(site, heads);
        }
    }
}

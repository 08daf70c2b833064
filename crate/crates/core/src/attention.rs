//! Attention kernels shared by region extraction and protected denoising.
//!
//! Maps are stored as `(positions, keys)` matrices. Cross-attention maps have
//! one column per prompt token; self-attention maps one column per latent
//! position of the same grid.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Additive mask value for "never attend". The most negative finite `f32`
/// keeps the logits finite; masked probabilities are then written as exact
/// zeros.
pub const MASKED: f32 = f32::MIN;

#[inline]
pub fn is_masked(value: f32) -> bool {
    value <= MASKED
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttnKind {
    Cross,
    #[serde(rename = "self")]
    SelfAttn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnMap {
    pub values: Array2<f32>,
    pub grid: Grid,
    pub kind: AttnKind,
}

impl AttnMap {
    pub fn new(values: Array2<f32>, grid: Grid, kind: AttnKind) -> Result<Self> {
        if values.nrows() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for a {grid} grid",
                values.nrows()
            )));
        }
        if kind == AttnKind::SelfAttn && values.ncols() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "self-attention map has {} columns for a {grid} grid",
                values.ncols()
            )));
        }
        Ok(Self { values, grid, kind })
    }

    /// Column `j` as a position vector.
    pub fn column(&self, j: usize) -> Vec<f32> {
        self.values.column(j).to_vec()
    }
}

/// Attention maps captured at one (step, layer) site, conditional branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub step: usize,
    pub layer: usize,
    /// Head-mean cross-attention map.
    pub cross: AttnMap,
    /// Head-mean self-attention map.
    pub self_attn: AttnMap,
    /// Per-head self-attention maps, replayed verbatim during layout
    /// preservation.
    pub self_heads: Vec<Array2<f32>>,
}

impl AttentionRecord {
    pub fn grid(&self) -> Grid {
        self.cross.grid
    }

    pub fn map(&self, kind: AttnKind) -> &AttnMap {
        match kind {
            AttnKind::Cross => &self.cross,
            AttnKind::SelfAttn => &self.self_attn,
        }
    }
}

/// `softmax((Q Kᵀ + mask) / √d)` row by row.
///
/// Masked entries (see [`MASKED`]) come out as exact zeros and the rest of
/// the row is the softmax of the unmasked sub-row. A row with every column
/// masked is an error.
pub fn attention(
    queries: ArrayView2<'_, f32>,
    keys: ArrayView2<'_, f32>,
    scale_dim: usize,
    additive_mask: Option<ArrayView2<'_, f32>>,
) -> Result<Array2<f32>> {
    if queries.ncols() != scale_dim || keys.ncols() != scale_dim {
        return Err(Error::ShapeMismatch(format!(
            "queries {:?} / keys {:?} against head dim {scale_dim}",
            queries.dim(),
            keys.dim()
        )));
    }
    let scores = queries.dot(&keys.t());
    if let Some(mask) = &additive_mask {
        if mask.dim() != scores.dim() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} against scores {:?}",
                mask.dim(),
                scores.dim()
            )));
        }
    }
    masked_softmax(scores, (scale_dim as f32).sqrt(), additive_mask)
}

/// Row-wise softmax of `(scores + mask) / scale`.
pub fn masked_softmax(
    mut scores: Array2<f32>,
    scale: f32,
    additive_mask: Option<ArrayView2<'_, f32>>,
) -> Result<Array2<f32>> {
    for (r, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        let mask_row = additive_mask.as_ref().map(|m| m.row(r));
        let masked = |j: usize| mask_row.as_ref().is_some_and(|m| is_masked(m[j]));

        let mut max = f32::NEG_INFINITY;
        for (j, v) in row.iter_mut().enumerate() {
            if masked(j) {
                continue;
            }
            let bias = mask_row.as_ref().map_or(0.0, |m| m[j]);
            *v = (*v + bias) / scale;
            max = max.max(*v);
        }
        if max == f32::NEG_INFINITY {
            return Err(Error::DegenerateRow { row: r });
        }

        let mut sum = 0.0f32;
        for (j, v) in row.iter_mut().enumerate() {
            if masked(j) {
                *v = 0.0;
            } else {
                *v = (*v - max).exp();
                sum += *v;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
    Ok(scores)
}

/// Element-wise mean over heads.
pub fn apply_heads_mean(per_head: &[Array2<f32>]) -> Result<Array2<f32>> {
    let first = per_head
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no heads to average".into()))?;
    let mut acc = first.clone();
    for head in &per_head[1..] {
        if head.dim() != acc.dim() {
            return Err(Error::ShapeMismatch(format!(
                "head of shape {:?} against {:?}",
                head.dim(),
                acc.dim()
            )));
        }
        acc += head;
    }
    let n = per_head.len() as f32;
    acc.mapv_inplace(|v| v / n);
    Ok(acc)
}

/// `(x - min) / (max - min)` over the whole matrix; all zeros when constant.
pub fn minmax_norm(values: &Array2<f32>) -> Array2<f32> {
    let mut out = values.clone();
    minmax_norm_in_place(out.as_slice_mut().expect("owned matrices are contiguous"));
    out
}

/// In-place variant of [`minmax_norm`] over a flat slice.
pub fn minmax_norm_in_place(values: &mut [f32]) {
    let (min, max) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if values.is_empty() || max <= min {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let range = max - min;
    values.iter_mut().for_each(|v| *v = (*v - min) / range);
}

/// For every target position, the source positions averaged into it.
fn pooling_sources(src: Grid, target: Grid) -> Vec<Vec<usize>> {
    if target.len() >= src.len() {
        (0..target.len()).map(|t| vec![src.nearest_from(target, t)]).collect()
    } else {
        let mut sources = vec![Vec::new(); target.len()];
        for s in 0..src.len() {
            sources[target.nearest_from(src, s)].push(s);
        }
        sources
    }
}

/// Resamples a map's latent axes onto `target`.
///
/// Downsampling averages the rows of each source block; upsampling copies
/// the nearest row. Self-attention columns are pooled by sum (or split on
/// upsampling) so rows stay stochastic when the grids divide evenly.
pub fn resample_map(map: &AttnMap, target: Grid) -> AttnMap {
    if map.grid == target {
        return map.clone();
    }
    let src = map.grid;
    let row_sources = pooling_sources(src, target);
    let cols = match map.kind {
        AttnKind::Cross => map.values.ncols(),
        AttnKind::SelfAttn => target.len(),
    };

    let mut rows = Array2::<f32>::zeros((target.len(), map.values.ncols()));
    for (t, sources) in row_sources.iter().enumerate() {
        for &s in sources {
            let mut dst = rows.row_mut(t);
            dst += &map.values.row(s);
        }
        let n = sources.len().max(1) as f32;
        rows.row_mut(t).mapv_inplace(|v| v / n);
    }
    if map.kind == AttnKind::Cross {
        return AttnMap {
            values: rows,
            grid: target,
            kind: map.kind,
        };
    }

    let mut values = Array2::<f32>::zeros((target.len(), cols));
    if target.len() >= src.len() {
        let split = target.len() as f32 / src.len() as f32;
        for c in 0..cols {
            let s = src.nearest_from(target, c);
            let mut dst = values.column_mut(c);
            dst.assign(&rows.column(s));
            dst.mapv_inplace(|v| v / split);
        }
    } else {
        for (c, sources) in pooling_sources(src, target).iter().enumerate() {
            for &s in sources {
                let mut dst = values.column_mut(c);
                dst += &rows.column(s);
            }
        }
    }
    AttnMap {
        values,
        grid: target,
        kind: map.kind,
    }
}

/// Mean over the selected records' maps of one kind at `canonical`, then
/// min-max normalized.
pub fn aggregate<'a, I, F>(records: I, kind: AttnKind, canonical: Grid, mut filter: F) -> Result<AttnMap>
where
    I: IntoIterator<Item = &'a AttentionRecord>,
    F: FnMut(&AttentionRecord) -> bool,
{
    let mut acc: Option<Array2<f32>> = None;
    let mut count = 0usize;
    for record in records.into_iter().filter(|r| filter(r)) {
        let map = resample_map(record.map(kind), canonical);
        match &mut acc {
            None => acc = Some(map.values),
            Some(a) => {
                if a.dim() != map.values.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "record (step {}, layer {}) has shape {:?}, expected {:?}",
                        record.step,
                        record.layer,
                        map.values.dim(),
                        a.dim()
                    )));
                }
                *a += &map.values;
            }
        }
        count += 1;
    }
    let mut mean = acc.ok_or(Error::EmptySelection)?;
    let n = count as f32;
    mean.mapv_inplace(|v| v / n);
    Ok(AttnMap {
        values: minmax_norm(&mean),
        grid: canonical,
        kind,
    })
}

//! Binary container for attention maps, regions and latents.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "SPDA"
//! version      u32      1
//! meta_len     u32
//! meta         meta_len bytes of UTF-8 JSON
//! entry_count  u32
//! entries:
//!   kind       u8       see EntryKind
//!   reserved   3 bytes  zero
//!   step       u32
//!   layer      u32
//!   index      u32      head or 0-based concept, 0 otherwise
//!   grid_w     u32
//!   grid_h     u32
//!   rows       u32
//!   cols       u32
//!   data       rows*cols f32, row-major
//! ```
//!
//! Binary masks are stored as 0.0/1.0. SP-mask entries store masked
//! positions as `-inf`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::attention::{AttentionRecord, AttnKind, AttnMap, MASKED};
use crate::error::{Error, Result};
use crate::extraction::RegionSet;
use crate::grid::{Grid, Mask};
use crate::pipeline::Generation;

pub const MAGIC: &[u8; 4] = b"SPDA";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EntryKind {
    CrossMap = 1,
    SelfMap = 2,
    SelfHead = 3,
    Anchor = 4,
    Region = 5,
    SpMask = 6,
    Noise = 7,
    Latent = 8,
    ConceptColumn = 9,
    AnchorAttention = 10,
    CrossNormalized = 11,
    TraceCross = 12,
    TraceSelf = 13,
}

impl EntryKind {
    fn from_tag(tag: u8) -> Option<Self> {
        use EntryKind::*;
        Some(match tag {
            1 => CrossMap,
            2 => SelfMap,
            3 => SelfHead,
            4 => Anchor,
            5 => Region,
            6 => SpMask,
            7 => Noise,
            8 => Latent,
            9 => ConceptColumn,
            10 => AnchorAttention,
            11 => CrossNormalized,
            12 => TraceCross,
            13 => TraceSelf,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub kind: EntryKind,
    pub step: u32,
    pub layer: u32,
    pub index: u32,
    pub grid: Grid,
    pub data: Array2<f32>,
}

impl Entry {
    pub fn new(kind: EntryKind, grid: Grid, data: Array2<f32>) -> Self {
        Self {
            kind,
            step: 0,
            layer: 0,
            index: 0,
            grid,
            data,
        }
    }

    pub fn at(mut self, step: usize, layer: usize, index: usize) -> Self {
        self.step = step as u32;
        self.layer = layer as u32;
        self.index = index as u32;
        self
    }
}

fn mask_column(mask: &Mask) -> Array2<f32> {
    Array2::from_shape_fn((mask.grid().len(), 1), |(i, _)| if mask.get(i) { 1.0 } else { 0.0 })
}

fn vector_column(v: &[f32]) -> Array2<f32> {
    Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i])
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub metadata: serde_json::Value,
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn push(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub fn find(&self, kind: EntryKind) -> impl Iterator<Item = &Entry> + '_ {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn push_records(&mut self, records: &[AttentionRecord], heads: bool) {
        for r in records {
            self.push(Entry::new(EntryKind::CrossMap, r.grid(), r.cross.values.clone()).at(r.step, r.layer, 0));
            self.push(Entry::new(EntryKind::SelfMap, r.grid(), r.self_attn.values.clone()).at(r.step, r.layer, 0));
            if heads {
                for (h, m) in r.self_heads.iter().enumerate() {
                    self.push(Entry::new(EntryKind::SelfHead, r.grid(), m.clone()).at(r.step, r.layer, h));
                }
            }
        }
    }

    pub fn push_regions(&mut self, regions: &RegionSet) {
        for (k, (a, d)) in regions.anchors.iter().zip(&regions.regions).enumerate() {
            self.push(Entry::new(EntryKind::Anchor, regions.grid, mask_column(a)).at(0, 0, k));
            self.push(Entry::new(EntryKind::Region, regions.grid, mask_column(d)).at(0, 0, k));
        }
    }

    /// Everything a generation produced: pass-1 records (with per-head
    /// self maps when `heads`), extraction intermediates, regions, mask,
    /// starting noise and final latent.
    pub fn from_generation(generation: &Generation, heads: bool) -> Self {
        let mut c = Container {
            metadata: serde_json::json!({
                "prompt": generation.prepared.parsed.raw,
                "parsed": generation.prepared.parsed,
                "diagnostics": generation.diagnostics,
                "concept_indices": generation.regions().map(|r| r.concept_indices.clone()),
            }),
            entries: Vec::new(),
        };
        let latent_grid = Grid::new(generation.noise.nrows(), 1);
        c.push(Entry::new(EntryKind::Noise, latent_grid, generation.noise.clone()));
        c.push(Entry::new(
            EntryKind::Latent,
            latent_grid,
            generation.output.latent.clone(),
        ));
        c.push_records(&generation.records, heads);
        for r in &generation.output.trace {
            c.push(Entry::new(EntryKind::TraceCross, r.grid(), r.cross.values.clone()).at(r.step, r.layer, 0));
            c.push(Entry::new(EntryKind::TraceSelf, r.grid(), r.self_attn.values.clone()).at(r.step, r.layer, 0));
        }
        if let Some(ex) = &generation.extraction {
            c.push_regions(&ex.regions);
            let g = ex.regions.grid;
            for (k, v) in ex.concept_columns.iter().enumerate() {
                c.push(Entry::new(EntryKind::ConceptColumn, g, vector_column(v)).at(0, 0, k));
            }
            for (k, v) in ex.anchor_attention.iter().enumerate() {
                c.push(Entry::new(EntryKind::AnchorAttention, g, vector_column(v)).at(0, 0, k));
            }
            for (k, v) in ex.cross_normalized.iter().enumerate() {
                c.push(Entry::new(EntryKind::CrossNormalized, g, vector_column(v)).at(0, 0, k));
            }
        }
        if let Some(m) = &generation.sp_mask {
            c.push(Entry::new(EntryKind::SpMask, m.grid(), m.values().to_owned()));
        }
        c
    }

    /// Pass-1 records rebuilt from the cross/self entries.
    pub fn records(&self) -> Result<Vec<AttentionRecord>> {
        let mut out = Vec::new();
        for cross in self.find(EntryKind::CrossMap) {
            let selfm = self
                .find(EntryKind::SelfMap)
                .find(|e| e.step == cross.step && e.layer == cross.layer)
                .ok_or(Error::RecordMismatch {
                    kind: "self",
                    step: cross.step as usize,
                    layer: cross.layer as usize,
                })?;
            let mut heads: Vec<&Entry> = self
                .find(EntryKind::SelfHead)
                .filter(|e| e.step == cross.step && e.layer == cross.layer)
                .collect();
            heads.sort_by_key(|e| e.index);
            out.push(AttentionRecord {
                step: cross.step as usize,
                layer: cross.layer as usize,
                cross: AttnMap::new(cross.data.clone(), cross.grid, AttnKind::Cross)?,
                self_attn: AttnMap::new(selfm.data.clone(), selfm.grid, AttnKind::SelfAttn)?,
                self_heads: heads.into_iter().map(|e| e.data.clone()).collect(),
            });
        }
        Ok(out)
    }

    /// Per-concept anchors and regions, ordered by concept.
    pub fn masks(&self, kind: EntryKind) -> Vec<Mask> {
        let mut entries: Vec<&Entry> = self.find(kind).collect();
        entries.sort_by_key(|e| e.index);
        entries
            .into_iter()
            .map(|e| Mask::from_fn(e.grid, |i| e.data[[i, 0]] > 0.5))
            .collect()
    }

    pub fn vectors(&self, kind: EntryKind) -> Vec<Vec<f32>> {
        let mut entries: Vec<&Entry> = self.find(kind).collect();
        entries.sort_by_key(|e| e.index);
        entries.into_iter().map(|e| e.data.column(0).to_vec()).collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let meta = serde_json::to_vec(&self.metadata)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&[e.kind as u8, 0, 0, 0])?;
            for v in [
                e.step,
                e.layer,
                e.index,
                e.grid.w as u32,
                e.grid.h as u32,
                e.data.nrows() as u32,
                e.data.ncols() as u32,
            ] {
                w.write_all(&v.to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(e.data.len() * 4);
            for &v in e.data.iter() {
                let v = if e.kind == EntryKind::SpMask && v == MASKED {
                    f32::NEG_INFINITY
                } else {
                    v
                };
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Container {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("bad magic".into());
        }
        let read_u32 = |r: &mut &[u8]| -> std::result::Result<u32, String> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| format!("truncated: {e}"))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let meta_len = read_u32(&mut r)? as usize;
        if r.len() < meta_len {
            return Err("truncated metadata".into());
        }
        let metadata = serde_json::from_slice(&r[..meta_len]).map_err(|e| e.to_string())?;
        r = &r[meta_len..];
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mut head = [0u8; 4];
            r.read_exact(&mut head).map_err(|e| format!("truncated: {e}"))?;
            let kind = EntryKind::from_tag(head[0]).ok_or_else(|| format!("unknown entry kind {}", head[0]))?;
            let step = read_u32(&mut r)?;
            let layer = read_u32(&mut r)?;
            let index = read_u32(&mut r)?;
            let grid = Grid::new(read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let n = rows * cols;
            if r.len() < n * 4 {
                return Err("truncated entry data".into());
            }
            let data: Vec<f32> = r[..n * 4]
                .chunks_exact(4)
                .map(|c| {
                    let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                    if kind == EntryKind::SpMask && v == f32::NEG_INFINITY {
                        MASKED
                    } else {
                        v
                    }
                })
                .collect();
            r = &r[n * 4..];
            entries.push(Entry {
                kind,
                step,
                layer,
                index,
                grid,
                data: Array2::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())?,
            });
        }
        Ok(Container { metadata, entries })
    }
}

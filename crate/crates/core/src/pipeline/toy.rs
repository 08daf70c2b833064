//! A tiny, fully deterministic transformer denoiser.
//!
//! Two blocks (self-attention, cross-attention, feed-forward): the first on
//! the full latent grid, the second on a 2x-pooled mid grid. Weights are
//! drawn from a fixed seed, the text embedder hashes token ids into
//! vectors, so nothing pretrained is involved.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::hooks::{AttentionHooks, Branch, Site};
use super::{Conditioning, DenoiserBackend, Image, LayerInfo};
use crate::attention::attention;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::prompt::Token;
use crate::protect::protected_attention;
use crate::tokenizer::ToyTokenizer;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub grid: Grid,
    pub channels: usize,
    pub hidden: usize,
    pub heads: usize,
    pub context_dim: usize,
    pub weight_seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            grid: Grid::square(16),
            channels: 8,
            hidden: 16,
            heads: 2,
            context_dim: 16,
            weight_seed: 0x5EED_0001,
        }
    }
}

struct Block {
    layer: usize,
    grid: Grid,
    self_q: Array2<f32>,
    self_k: Array2<f32>,
    self_v: Array2<f32>,
    self_out: Array2<f32>,
    cross_q: Array2<f32>,
    cross_k: Array2<f32>,
    cross_v: Array2<f32>,
    cross_out: Array2<f32>,
    ff_in: Array2<f32>,
    ff_out: Array2<f32>,
}

pub struct ToyDenoiser {
    cfg: ToyConfig,
    tokenizer: ToyTokenizer,
    proj_in: Array2<f32>,
    proj_out: Array2<f32>,
    blocks: [Block; 2],
    invocations: AtomicUsize,
}

fn weights(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gain: f32) -> Array2<f32> {
    let std = gain / (rows as f32).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || {
        let v: f32 = StandardNormal.sample(rng);
        v * std
    })
}

fn layer_norm(x: &Array2<f32>) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.len() as f32;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044_715 * x * x * x)).tanh())
}

fn sinusoid(value: f32, dim: usize) -> Array1<f32> {
    Array1::from_shape_fn(dim, |i| {
        let freq = (-((i / 2) as f32) * 2.0 * (10_000f32).ln() / dim as f32).exp();
        if i % 2 == 0 {
            (value * freq).sin()
        } else {
            (value * freq).cos()
        }
    })
}

fn pool2(x: &Array2<f32>, grid: Grid) -> Array2<f32> {
    let out_grid = Grid::new(grid.w / 2, grid.h / 2);
    let mut out = Array2::zeros((out_grid.len(), x.ncols()));
    for i in 0..out_grid.len() {
        let (ox, oy) = out_grid.coords(i);
        let mut row = out.row_mut(i);
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            row += &x.row(grid.index(2 * ox + dx, 2 * oy + dy));
        }
        row.mapv_inplace(|v| v * 0.25);
    }
    out
}

fn upsample2(x: &Array2<f32>, grid: Grid) -> Array2<f32> {
    let big = Grid::new(grid.w * 2, grid.h * 2);
    let mut out = Array2::zeros((big.len(), x.ncols()));
    for i in 0..big.len() {
        out.row_mut(i).assign(&x.row(grid.nearest_from(big, i)));
    }
    out
}

impl Block {
    fn new(rng: &mut ChaCha8Rng, layer: usize, grid: Grid, cfg: &ToyConfig) -> Self {
        let (d, e) = (cfg.hidden, cfg.context_dim);
        Self {
            layer,
            grid,
            self_q: weights(rng, d, d, 1.5),
            self_k: weights(rng, d, d, 1.5),
            self_v: weights(rng, d, d, 1.0),
            self_out: weights(rng, d, d, 0.5),
            cross_q: weights(rng, d, d, 2.0),
            cross_k: weights(rng, e, d, 2.0),
            cross_v: weights(rng, e, d, 1.0),
            cross_out: weights(rng, d, d, 0.5),
            ff_in: weights(rng, d, 2 * d, 1.0),
            ff_out: weights(rng, 2 * d, d, 0.5),
        }
    }

    fn forward(
        &self,
        mut h: Array2<f32>,
        context: ArrayView2<'_, f32>,
        heads: usize,
        site: Site,
        hooks: &mut dyn AttentionHooks,
    ) -> Result<Array2<f32>> {
        let d = h.ncols();
        let dh = d / heads;

        let x = layer_norm(&h);
        let (q, k, v) = (x.dot(&self.self_q), x.dot(&self.self_k), x.dot(&self.self_v));
        let probs: Vec<Array2<f32>> = match hooks.self_override(&site)? {
            Some(stored) => {
                if stored.len() != heads || stored.iter().any(|m| m.dim() != (site.grid.len(), site.grid.len())) {
                    return Err(Error::ShapeMismatch(format!(
                        "stored self-attention for layer {} does not match {heads} heads on {}",
                        site.layer, site.grid
                    )));
                }
                stored.to_vec()
            }
            None => (0..heads)
                .map(|hd| {
                    let cols = s![.., hd * dh..(hd + 1) * dh];
                    attention(q.slice(cols), k.slice(cols), dh, None)
                })
                .collect::<Result<_>>()?,
        };
        hooks.observe_self(&site, &probs);
        let mut attended = Array2::<f32>::zeros((h.nrows(), d));
        for (hd, p) in probs.iter().enumerate() {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            attended.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        }
        h += &attended.dot(&self.self_out);

        let x = layer_norm(&h);
        let (q, k, v) = (
            x.dot(&self.cross_q),
            context.dot(&self.cross_k),
            context.dot(&self.cross_v),
        );
        let mask = hooks.cross_mask(&site).cloned();
        let mut probs = Vec::with_capacity(heads);
        let mut attended = Array2::<f32>::zeros((h.nrows(), d));
        for hd in 0..heads {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            let (p, out) = match &mask {
                Some(m) => {
                    let o = protected_attention(q.slice(cols), k.slice(cols), v.slice(cols), m, site.grid)?;
                    (o.probs, o.attended)
                }
                None => {
                    let p = attention(q.slice(cols), k.slice(cols), dh, None)?;
                    let out = p.dot(&v.slice(cols));
                    (p, out)
                }
            };
            attended.slice_mut(cols).assign(&out);
            probs.push(p);
        }
        hooks.observe_cross(&site, &probs);
        h += &attended.dot(&self.cross_out);

        let x = layer_norm(&h);
        let inner = x.dot(&self.ff_in).mapv(gelu);
        h += &inner.dot(&self.ff_out);
        Ok(h)
    }
}

impl ToyDenoiser {
    pub fn new(cfg: ToyConfig) -> Self {
        assert!(
            cfg.grid.w.is_multiple_of(2) && cfg.grid.h.is_multiple_of(2),
            "toy grid must be even"
        );
        assert_eq!(cfg.hidden % cfg.heads, 0, "hidden size must split across heads");
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.weight_seed);
        let proj_in = weights(&mut rng, cfg.channels, cfg.hidden, 1.0);
        let proj_out = weights(&mut rng, cfg.hidden, cfg.channels, 1.0);
        let mid = Grid::new(cfg.grid.w / 2, cfg.grid.h / 2);
        let blocks = [
            Block::new(&mut rng, 0, cfg.grid, &cfg),
            Block::new(&mut rng, 1, mid, &cfg),
        ];
        Self {
            cfg,
            tokenizer: ToyTokenizer::default(),
            proj_in,
            proj_out,
            blocks,
            invocations: AtomicUsize::new(0),
        }
    }

    /// Number of `predict` calls so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn reset_invocations(&self) {
        self.invocations.store(0, Ordering::SeqCst);
    }

    fn token_vector(&self, id: u32, position: usize) -> Array1<f32> {
        let seed = 0x7E57_0000_0000u64 ^ u64::from(id).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Array1::from_shape_simple_fn(self.cfg.context_dim, || {
            let v: f32 = StandardNormal.sample(&mut rng);
            v
        });
        base + sinusoid(position as f32, self.cfg.context_dim) * 0.1
    }

    fn branch(
        &self,
        latent: &Array2<f32>,
        context: ArrayView2<'_, f32>,
        step: usize,
        timestep: usize,
        branch: Branch,
        hooks: &mut dyn AttentionHooks,
    ) -> Result<Array2<f32>> {
        let temb = sinusoid(timestep as f32, self.cfg.hidden);
        let mut h = latent.dot(&self.proj_in);
        h += &temb;
        let site = |b: &Block| Site {
            step,
            layer: b.layer,
            grid: b.grid,
            branch,
        };
        let [outer, inner] = &self.blocks;
        let h0 = outer.forward(h, context, self.cfg.heads, site(outer), hooks)?;
        let pooled = pool2(&h0, outer.grid);
        let mid = inner.forward(pooled, context, self.cfg.heads, site(inner), hooks)?;
        let h = &h0 + &upsample2(&mid, inner.grid);
        Ok(layer_norm(&h).dot(&self.proj_out))
    }
}

impl Default for ToyDenoiser {
    fn default() -> Self {
        Self::new(ToyConfig::default())
    }
}

impl DenoiserBackend for ToyDenoiser {
    fn name(&self) -> &str {
        "toy"
    }

    fn latent_grid(&self) -> Grid {
        self.cfg.grid
    }

    fn latent_channels(&self) -> usize {
        self.cfg.channels
    }

    fn layers(&self) -> Vec<LayerInfo> {
        self.blocks
            .iter()
            .map(|b| LayerInfo {
                id: b.layer,
                grid: b.grid,
                heads: self.cfg.heads,
            })
            .collect()
    }

    fn tokenize(&self, prompt: &str) -> Vec<Token> {
        self.tokenizer.tokenize(prompt)
    }

    fn encode(&self, tokens: &[Token]) -> Array2<f32> {
        let mut out = Array2::zeros((tokens.len(), self.cfg.context_dim));
        for (i, t) in tokens.iter().enumerate() {
            out.row_mut(i).assign(&self.token_vector(t.id, i));
        }
        out
    }

    fn predict(
        &self,
        latent: &Array2<f32>,
        cond: &Conditioning,
        step: usize,
        timestep: usize,
        guidance: f32,
        hooks: &mut dyn AttentionHooks,
    ) -> Result<Array2<f32>> {
        if latent.dim() != (self.cfg.grid.len(), self.cfg.channels) {
            return Err(Error::Backend(format!(
                "latent of shape {:?}, expected {:?}",
                latent.dim(),
                (self.cfg.grid.len(), self.cfg.channels)
            )));
        }
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let uncond = self.branch(latent, cond.uncond.view(), step, timestep, Branch::Unconditional, hooks)?;
        let text = self.branch(latent, cond.cond.view(), step, timestep, Branch::Conditional, hooks)?;
        Ok(&uncond + &((&text - &uncond) * guidance))
    }

    fn decode(&self, latent: &Array2<f32>) -> Image {
        let grid = self.cfg.grid;
        let mut pixels = Vec::with_capacity(grid.len() * 3);
        for i in 0..grid.len() {
            for c in 0..3 {
                let v = latent[[i, c % self.cfg.channels]];
                pixels.push(((v.tanh() * 0.5 + 0.5) * 255.0).round() as u8);
            }
        }
        Image {
            width: grid.w,
            height: grid.h,
            pixels,
        }
    }
}

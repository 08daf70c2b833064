//! A synthetic two-concept attention stack with known regions.
//!
//! Two disc-shaped blobs on the latent grid. The first concept's column is
//! bright over its own blob only; the second (entangled) concept's column
//! is bright over both, brightest over its own. Self-attention is block
//! structured: positions inside a blob attend mostly within it.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spdiffusion::attention::{AttentionRecord, AttnKind, AttnMap};
use spdiffusion::dump::Container;
use spdiffusion::prompt::{parse_template, ParsedPrompt, Template};
use spdiffusion::{Grid, Mask};

pub const SCENARIO_PROMPT: &str = "a white shirt bear and gray hat mouse";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub side: usize,
    pub radius: f32,
    /// Concept column value at the blob edge, relative to its peak.
    pub edge_level: f32,
    /// Peak of the entangled column over the other concept's blob,
    /// relative to its own peak.
    pub entangled_peak: f32,
    /// Share of a blob position's self-attention spent inside its blob.
    pub self_focus: f32,
    /// Relative multiplicative jitter on every map entry.
    pub noise: f32,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            side: 16,
            radius: 3.5,
            edge_level: 0.5,
            entangled_peak: 0.8,
            self_focus: 0.9,
            noise: 0.02,
            steps: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: Grid,
    pub parsed: ParsedPrompt,
    pub records: Vec<AttentionRecord>,
    /// Ground-truth region per concept.
    pub truth: Vec<Mask>,
}

impl Scenario {
    pub fn generate(config: &ScenarioConfig) -> Self {
        let grid = Grid::square(config.side);
        let parsed = parse_template(SCENARIO_PROMPT, Template::Animals100).expect("scenario prompt fits its template");
        let s = config.side as f32;
        let centers = [(s * 0.28, s * 0.5), (s * 0.72, s * 0.5)];
        let dist = |i: usize, c: (f32, f32)| {
            let (x, y) = grid.coords(i);
            ((x as f32 + 0.5 - c.0).powi(2) + (y as f32 + 0.5 - c.1).powi(2)).sqrt()
        };
        let truth: Vec<Mask> = centers
            .iter()
            .map(|&c| Mask::from_fn(grid, |i| dist(i, c) <= config.radius))
            .collect();

        // Gaussian falloff reaching `edge_level` at the blob radius.
        let sigma2 = config.radius.powi(2) / (2.0 * (1.0 / config.edge_level).ln());
        let bump = |i: usize, c: (f32, f32)| (-dist(i, c).powi(2) / (2.0 * sigma2)).exp();
        let concept_tokens: Vec<usize> = parsed.concepts.iter().map(|c| c.concept.start).collect();
        let attribute_tokens: Vec<Vec<usize>> = parsed
            .concepts
            .iter()
            .map(|c| c.attributes.iter().map(|a| a.start).collect())
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let tokens = parsed.token_count;
        let n = grid.len();
        let mut records = Vec::new();
        for step in 0..config.steps {
            let mut jitter = || 1.0 + config.noise * rng.random_range(-1.0f32..1.0);

            let mut cross = Array2::<f32>::zeros((n, tokens));
            for i in 0..n {
                let first = bump(i, centers[0]);
                let second = bump(i, centers[1]).max(config.entangled_peak * first);
                let columns = [first, second];
                let mut used = 0.0;
                for k in 0..2 {
                    let v = 0.45 * columns[k] * jitter();
                    cross[[i, concept_tokens[k]]] = v;
                    used += v;
                    for &a in &attribute_tokens[k] {
                        let v = 0.04 * columns[k] * jitter();
                        cross[[i, a]] = v;
                        used += v;
                    }
                }
                cross[[i, 0]] = 1.0 - used;
            }

            let owner = |i: usize| truth.iter().position(|m| m.get(i));
            let sizes: Vec<usize> = truth.iter().map(Mask::count).collect();
            let background = n - sizes.iter().sum::<usize>();
            let mut selfm = Array2::<f32>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    let same = owner(i) == owner(j);
                    let block = match owner(j) {
                        Some(k) => sizes[k],
                        None => background,
                    };
                    let focused = if same { config.self_focus / block as f32 } else { 0.0 };
                    selfm[[i, j]] = (focused + (1.0 - config.self_focus) / n as f32) * jitter();
                }
                let sum: f32 = selfm.row(i).sum();
                selfm.row_mut(i).mapv_inplace(|v| v / sum);
            }

            records.push(AttentionRecord {
                step,
                layer: 0,
                cross: AttnMap::new(cross, grid, AttnKind::Cross).expect("grid-shaped map"),
                self_attn: AttnMap::new(selfm, grid, AttnKind::SelfAttn).expect("grid-shaped map"),
                self_heads: Vec::new(),
            });
        }

        Self {
            config: config.clone(),
            grid,
            parsed,
            records,
            truth,
        }
    }

    /// Records plus prompt, parse and ground truth, for `inspect`.
    pub fn container(&self) -> Container {
        let truth: Vec<Vec<usize>> = self.truth.iter().map(|m| m.positions().collect()).collect();
        let mut c = Container {
            metadata: serde_json::json!({
                "prompt": self.parsed.raw,
                "parsed": self.parsed,
                "scenario": self.config,
                "truth": truth,
            }),
            entries: Vec::new(),
        };
        c.push_records(&self.records, false);
        c
    }
}

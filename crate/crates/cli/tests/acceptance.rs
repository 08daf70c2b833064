//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spdiffusion::attention::{attention, is_masked, masked_softmax, AttentionRecord, AttnKind, AttnMap, MASKED};
use spdiffusion::extraction::{extract, extract_cross_only, ExtractionConfig, RegionSet};
use spdiffusion::pipeline::{
    generate, generate_with_mask, prepare, run_plain, DenoiserBackend, PipelineConfig, ToyDenoiser,
};
use spdiffusion::prompt::{parse_prompt, parse_template, ConceptSpan, ParsedPrompt, Template, TokenSpan};
use spdiffusion::protect::{build_sp_mask, protected_attention, MaskGroup, SpMask};
use spdiffusion::{Grid, Mask};
use spdiffusion_bench::dataset::generate_dataset;
use spdiffusion_bench::questions::{blip_vqa_questions, internvl_protocol};
use spdiffusion_bench::scenario::{Scenario, ScenarioConfig};
use spdiffusion_bench::scorer::StubScorer;
use spdiffusion_bench::sweep::{threshold_sweep, SweepCase, SweepContext, SweepMode};
use spdiffusion_cli::bench::{cmd_bench, BenchArgs};
use spdiffusion_cli::generate::{cmd_generate, GenerateArgs, CONTAINER_FILE};
use spdiffusion_cli::inspect::{cmd_inspect, InspectArgs};
use spdiffusion_cli::manifest::{replay, MANIFEST_FILE};

const BUDGET: Duration = Duration::from_secs(60);

fn panic_message(e: &(dyn std::any::Any + Send)) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

type Criterion = (&'static str, fn() -> String);

fn main() {
    let criteria: [Criterion; 10] = [
        ("mask algebra", mask_algebra),
        ("extraction oracle equivalence", extraction_oracle),
        ("synthetic entanglement recovery", entanglement_recovery),
        ("threshold trend", threshold_trend),
        ("empty-mask equivalence", empty_mask_equivalence),
        ("cost accounting", cost_accounting),
        ("parser round-trip", parser_round_trip),
        ("sp-mask structural audit", sp_mask_audit),
        ("protocol fidelity", protocol_fidelity),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, body)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(body));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("ACCEPTANCE {:>2} PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(e) => {
                failed += 1;
                println!(
                    "ACCEPTANCE {:>2} FAIL {name} ({secs:.1}s): {}",
                    i + 1,
                    panic_message(&*e)
                );
            }
        }
    }
    let _ = panic::take_hook();
    if failed > 0 {
        println!("{failed} acceptance criterion(s) failed");
        std::process::exit(1);
    }
}

fn random_mask(rng: &mut ChaCha8Rng, grid: Grid, tokens: usize) -> SpMask {
    let groups_n = rng.random_range(1..=3);
    let owner: Vec<Option<usize>> = (0..grid.len())
        .map(|_| rng.random_bool(0.7).then(|| rng.random_range(0..groups_n)))
        .collect();
    let groups = (0..groups_n)
        .map(|g| {
            // Token 0 is never excluded, so every row keeps a column.
            let excluded: BTreeSet<usize> = (1..tokens).filter(|_| rng.random_bool(0.5)).collect();
            MaskGroup {
                label: format!("g{g}"),
                region: Mask::from_fn(grid, |p| owner[p] == Some(g)),
                tokens: excluded,
            }
        })
        .collect();
    SpMask::from_groups(grid, tokens, groups).unwrap()
}

/// Softmax over the kept columns only, in f64; deleted columns get 0.
fn deletion_oracle(q: ArrayView2<'_, f32>, k: ArrayView2<'_, f32>, keep: impl Fn(usize, usize) -> bool) -> Array2<f64> {
    let d = q.ncols() as f64;
    let mut out = Array2::zeros((q.nrows(), k.nrows()));
    for i in 0..q.nrows() {
        let logits: Vec<Option<f64>> = (0..k.nrows())
            .map(|j| {
                keep(i, j).then(|| {
                    q.row(i)
                        .iter()
                        .zip(k.row(j))
                        .map(|(&a, &b)| a as f64 * b as f64)
                        .sum::<f64>()
                        / d.sqrt()
                })
            })
            .collect();
        let max = logits.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().flatten().map(|l| (l - max).exp()).sum();
        for (j, l) in logits.iter().enumerate() {
            out[[i, j]] = l.map_or(0.0, |l| (l - max).exp() / z);
        }
    }
    out
}

fn mask_algebra() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut masked_total, mut untouched_rows) = (0usize, 0usize);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let grid = Grid::new(rng.random_range(1..=6), rng.random_range(1..=6));
        let tokens = rng.random_range(2..=12);
        let d = rng.random_range(2..=16);
        let mask = random_mask(&mut rng, grid, tokens);
        let mut uniform = |rows, cols| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0f32..2.0));
        let q = uniform(grid.len(), d);
        let k = uniform(tokens, d);
        let v = uniform(tokens, 3);

        let out = protected_attention(q.view(), k.view(), v.view(), &mask, grid).unwrap();
        let plain = attention(q.view(), k.view(), d, None).unwrap();
        let oracle = deletion_oracle(q.view(), k.view(), |i, j| !mask.is_masked(i, j));
        for i in 0..grid.len() {
            let row_masked = (0..tokens).any(|j| mask.is_masked(i, j));
            for j in 0..tokens {
                let p = out.probs[[i, j]];
                if mask.is_masked(i, j) {
                    assert!(p == 0.0, "case {case}: masked ({i}, {j}) has probability {p}");
                    masked_total += 1;
                } else {
                    assert!(p > 0.0, "case {case}: kept ({i}, {j}) has probability {p}");
                }
                let err = (p as f64 - oracle[[i, j]]).abs();
                worst = worst.max(err);
                assert!(
                    err <= 1e-6,
                    "case {case}: ({i}, {j}) off the deletion oracle by {err:e}"
                );
                if !row_masked {
                    assert_eq!(
                        p.to_bits(),
                        plain[[i, j]].to_bits(),
                        "case {case}: untouched row {i} changed"
                    );
                }
            }
            untouched_rows += usize::from(!row_masked);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < BUDGET, "took {elapsed:?}");
    format!("1000 masks, {masked_total} masked entries exactly zero, {untouched_rows} untouched rows bit-identical, max oracle error {worst:.1e}")
}

fn span(start: usize, end: usize) -> TokenSpan {
    TokenSpan {
        start,
        end,
        surface: format!("t{start}"),
        chars: start..end,
    }
}

/// BOS, then per concept an attribute and a one- or two-token concept word
/// and a separator, then EOS.
fn synthetic_prompt(rng: &mut ChaCha8Rng, n: usize) -> ParsedPrompt {
    let mut concepts = Vec::new();
    let mut t = 1;
    for k in 0..n {
        let len = rng.random_range(1..=2);
        concepts.push(ConceptSpan {
            index: k + 1,
            attributes: vec![span(t, t + 1)],
            concept: span(t + 1, t + 1 + len),
        });
        t += 2 + len;
    }
    let token_count = t + 1;
    ParsedPrompt {
        raw: String::new(),
        concepts,
        token_count,
        special_token_indices: BTreeSet::from([0, token_count - 1]),
    }
}

fn softmax_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sharp: f32) -> Array2<f32> {
    masked_softmax(
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-sharp..sharp)),
        1.0,
        None,
    )
    .unwrap()
}

fn oracle_minmax(v: &mut [f32]) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &x in v.iter() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    for x in v.iter_mut() {
        *x = if hi > lo { (*x - lo) / (hi - lo) } else { 0.0 };
    }
}

/// Straight-line extraction: average the 8×8 records, normalize, threshold
/// the concept columns into anchors, average self-attention toward them,
/// subtract the other concepts' mean, threshold, and settle overlaps.
fn brute_force_extract(
    records: &[AttentionRecord],
    parsed: &ParsedPrompt,
    s_ca: f32,
    s_sa: f32,
) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let grid = Grid::square(8);
    let cells = grid.len();
    let used: Vec<&AttentionRecord> = records.iter().filter(|r| r.grid() == grid).collect();
    let tokens = parsed.token_count;
    let mut cross = vec![0.0f32; cells * tokens];
    let mut selfm = vec![0.0f32; cells * cells];
    for (i, r) in used.iter().enumerate() {
        for p in 0..cells {
            for t in 0..tokens {
                let v = r.cross.values[[p, t]];
                cross[p * tokens + t] = if i == 0 { v } else { cross[p * tokens + t] + v };
            }
            for q in 0..cells {
                let v = r.self_attn.values[[p, q]];
                selfm[p * cells + q] = if i == 0 { v } else { selfm[p * cells + q] + v };
            }
        }
    }
    let count = used.len() as f32;
    cross.iter_mut().for_each(|v| *v /= count);
    selfm.iter_mut().for_each(|v| *v /= count);
    oracle_minmax(&mut cross);
    oracle_minmax(&mut selfm);

    let n = parsed.concepts.len();
    let mut anchors = Vec::new();
    let mut attn = Vec::new();
    for c in &parsed.concepts {
        let mut col = vec![0.0f32; cells];
        for (p, slot) in col.iter_mut().enumerate() {
            let mut sum = 0.0f32;
            for t in c.concept.start..c.concept.end {
                sum += cross[p * tokens + t];
            }
            *slot = sum / (c.concept.end - c.concept.start) as f32;
        }
        oracle_minmax(&mut col);
        let mut a: Vec<bool> = col.iter().map(|&v| v >= s_ca).collect();
        if !a.contains(&true) {
            let mut best = 0;
            for p in 1..cells {
                if col[p] > col[best] {
                    best = p;
                }
            }
            a[best] = true;
        }
        let picked: Vec<usize> = (0..cells).filter(|&q| a[q]).collect();
        let mut sa = vec![0.0f32; cells];
        for (p, slot) in sa.iter_mut().enumerate() {
            let mut sum = 0.0f32;
            for &q in &picked {
                sum += selfm[p * cells + q];
            }
            *slot = sum / picked.len() as f32;
        }
        anchors.push(a);
        attn.push(sa);
    }
    let mut normed = Vec::new();
    for k in 0..n {
        let mut v = vec![0.0f32; cells];
        for (p, slot) in v.iter_mut().enumerate() {
            let mut others = 0.0f32;
            for (j, a) in attn.iter().enumerate() {
                if j != k {
                    others += a[p];
                }
            }
            *slot = (attn[k][p] - others / (n - 1) as f32).max(0.0);
        }
        oracle_minmax(&mut v);
        normed.push(v);
    }
    let mut regions: Vec<Vec<bool>> = (0..n)
        .map(|k| {
            let r: Vec<bool> = normed[k].iter().map(|&v| v >= s_sa).collect();
            if r.contains(&true) {
                r
            } else {
                anchors[k].clone()
            }
        })
        .collect();
    for p in 0..cells {
        let claimants: Vec<usize> = (0..n).filter(|&k| regions[k][p]).collect();
        if claimants.len() > 1 {
            let mut winner = claimants[0];
            for &k in &claimants[1..] {
                if normed[k][p] > normed[winner][p] {
                    winner = k;
                }
            }
            for &k in &claimants {
                regions[k][p] = k == winner;
            }
        }
    }
    (anchors, regions)
}

fn extraction_oracle() -> String {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cells_compared = 0;
    for case in 0..100 {
        let n = rng.random_range(2..=4);
        let parsed = synthetic_prompt(&mut rng, n);
        let mut records = Vec::new();
        for step in 0..2 {
            for (layer, side) in [(0, 8), (1, 8), (2, 16)] {
                let grid = Grid::square(side);
                let cross = softmax_rows(&mut rng, grid.len(), parsed.token_count, 4.0);
                let selfm = softmax_rows(&mut rng, grid.len(), grid.len(), 4.0);
                records.push(AttentionRecord {
                    step,
                    layer,
                    cross: AttnMap::new(cross, grid, AttnKind::Cross).unwrap(),
                    self_attn: AttnMap::new(selfm, grid, AttnKind::SelfAttn).unwrap(),
                    self_heads: Vec::new(),
                });
            }
        }
        let (s_ca, s_sa) = if case % 2 == 0 {
            (0.9, 0.2)
        } else {
            (rng.random_range(0.5..0.95), rng.random_range(0.05..0.6))
        };
        let cfg = ExtractionConfig {
            s_ca,
            s_sa,
            ..ExtractionConfig::default()
        };
        let got = extract(&records, &parsed, &cfg).unwrap();
        let (anchors, regions) = brute_force_extract(&records, &parsed, s_ca, s_sa);
        assert_eq!(got.grid, Grid::square(8), "case {case}");
        for k in 0..n {
            assert_eq!(
                got.anchors[k].bits(),
                anchors[k].as_slice(),
                "case {case}: anchors of concept {k}"
            );
            assert_eq!(
                got.regions[k].bits(),
                regions[k].as_slice(),
                "case {case}: region of concept {k}"
            );
            cells_compared += 64;
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < BUDGET, "took {elapsed:?}");
    format!("100 stacks, {cells_compared} region cells equal to the brute-force oracle")
}

fn entanglement_recovery() -> String {
    let mut lines = Vec::new();
    for seed in 0..4 {
        let sc = Scenario::generate(&ScenarioConfig {
            seed,
            ..Default::default()
        });
        let sp = extract(&sc.records, &sc.parsed, &ExtractionConfig::default()).unwrap();
        assert!(sp.find_overlap().is_none(), "seed {seed}: regions overlap");
        let direct = extract_cross_only(&sc.records, &sc.parsed, &ExtractionConfig::default(), 0.9).unwrap();
        let mut ious = Vec::new();
        let mut areas = Vec::new();
        for k in 0..2 {
            let iou = sp.regions[k].iou(&sc.truth[k]);
            assert!(iou >= 0.9, "seed {seed}: concept {} IoU {iou:.3}", k + 1);
            let (area, truth) = (direct.regions[k].count(), sc.truth[k].count());
            // Area criterion: the direct region must cover at least half of
            // the ground-truth region.
            assert!(
                2 * area < truth,
                "seed {seed}: direct thresholding covers {area}/{truth} cells of concept {}",
                k + 1
            );
            ious.push(format!("{iou:.2}"));
            areas.push(format!("{area}/{truth}"));
        }
        lines.push(format!(
            "seed {seed} IoU [{}] direct area [{}]",
            ious.join(", "),
            areas.join(", ")
        ));
    }
    lines.join("; ")
}

fn threshold_trend() -> String {
    let backend = ToyDenoiser::default();
    let cases: Vec<SweepCase> = (0..8)
        .map(|seed| {
            SweepCase::Scenario(Box::new(Scenario::generate(&ScenarioConfig {
                seed,
                ..Default::default()
            })))
        })
        .collect();
    let ctx = SweepContext {
        backend: &backend,
        pipeline: PipelineConfig::default(),
        scorer: &StubScorer,
        workers: 2,
    };
    let thresholds = [0.1, 0.2, 0.3, 0.4, 0.5];
    let report = threshold_sweep(&cases, &thresholds, &SweepMode::ALL, &ctx).unwrap();
    let sp = report.curve(SweepMode::SpExtraction);
    let cross = report.curve(SweepMode::CrossAttnOnly);
    let mut cells = Vec::new();
    for ((t, a), (_, b)) in sp.iter().zip(&cross) {
        assert!(a >= b, "at {t}: sp_extraction {a:.2} < cross_attn_only {b:.2}");
        cells.push(format!("{t}: {a:.1} vs {b:.1}"));
    }
    cells.join(", ")
}

fn empty_mask_equivalence() -> String {
    let backend = ToyDenoiser::default();
    for seed in 0..10 {
        let cfg = PipelineConfig {
            seed,
            ..PipelineConfig::default()
        };
        let prepared = prepare(&backend, "a red car and a blue bench").unwrap();
        let zero = SpMask::zeros(backend.latent_grid(), prepared.tokens.len());
        let plain = run_plain(&cfg, &prepared, &backend).unwrap();
        let masked = generate_with_mask(prepared, &cfg, &backend, zero).unwrap();
        let bits = |a: &Array2<f32>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&masked.output.latent), bits(&plain.latent), "seed {seed}: latent");
        assert_eq!(masked.output.image, plain.image, "seed {seed}: image");
    }
    "10 seeds, latents and images bit-identical".into()
}

fn cost_accounting() -> String {
    let backend = ToyDenoiser::default();
    let prompts = [
        "a red car and a blue bench",
        "a white shirt bear and gray hat mouse",
        "a woman, red hat, blue scarf, green coat, black boots",
    ];
    let mut seen = Vec::new();
    for (steps, ts) in [(20, 2), (10, 3)] {
        for prompt in prompts {
            let cfg = PipelineConfig {
                total_steps: steps,
                protection_steps: ts,
                ..PipelineConfig::default()
            };
            backend.reset_invocations();
            let g = generate(prompt, &cfg, &backend).unwrap();
            assert!(
                g.diagnostics.protection_active,
                "{prompt}: {:?}",
                g.diagnostics.skipped_because
            );
            assert_eq!(backend.invocations(), steps + ts, "{prompt} at T={steps}, T_s={ts}");
            assert_eq!(g.diagnostics.backend_steps, steps + ts);
        }
        seen.push(format!("T={steps}, T_s={ts} -> {}", steps + ts));
    }
    format!("{} on 3 prompts", seen.join(", "))
}

fn parser_round_trip() -> String {
    let mut ok = 0;
    for t in Template::ALL {
        for item in generate_dataset(t, 0).items {
            assert_eq!(parse_template(&item.text, t).unwrap(), item.gold, "{:?}", item.text);
            assert_eq!(parse_prompt(&item.text), item.gold, "{:?}", item.text);
            ok += 1;
        }
    }
    assert_eq!(ok, 300);
    format!("{ok}/300 prompts recovered exactly")
}

fn audit_case(w: usize, h: usize, n: usize, seed: u64) -> std::result::Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parsed = synthetic_prompt(&mut rng, n);
    let grid = Grid::new(w, h);
    let owner: Vec<Option<usize>> = (0..grid.len())
        .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..n)))
        .collect();
    let regions: Vec<Mask> = (0..n).map(|k| Mask::from_fn(grid, |p| owner[p] == Some(k))).collect();
    let set = RegionSet {
        grid,
        anchors: regions.clone(),
        regions,
        concept_indices: (1..=n).collect(),
    };
    let mask = build_sp_mask(&set, &parsed).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let concept_tokens: BTreeSet<usize> = parsed.concepts.iter().flat_map(ConceptSpan::protected_tokens).collect();
    for p in 0..grid.len() {
        let masked: BTreeSet<usize> = (0..parsed.token_count).filter(|&t| mask.is_masked(p, t)).collect();
        let expected = owner[p].map(|k| parsed.foreign_tokens(k)).unwrap_or_default();
        prop_assert_eq!(&masked, &expected, "position {}", p);
        prop_assert!(masked.len() < parsed.token_count, "row {} fully masked", p);
        prop_assert!(masked.is_subset(&concept_tokens), "row {} masks a shared token", p);
        for t in 0..parsed.token_count {
            let v = mask.values()[[p, t]];
            prop_assert!(
                v == 0.0 || (v == MASKED && is_masked(v)),
                "value {} at ({}, {})",
                v,
                p,
                t
            );
        }
    }
    for t in &parsed.special_token_indices {
        prop_assert!(mask.values().column(*t).iter().all(|&v| v == 0.0));
    }
    Ok(())
}

fn sp_mask_audit() -> String {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let strategy = (1usize..=7, 1usize..=7, 2usize..=4, any::<u64>());
    runner
        .run(&strategy, |(w, h, n, seed)| audit_case(w, h, n, seed))
        .unwrap_or_else(|e| panic!("{e}"));
    "1000 random region sets: masked tokens equal foreign tokens per region, shared and special tokens never masked, every row keeps a column".into()
}

fn protocol_fidelity() -> String {
    let mut questions = 0;
    for t in Template::ALL {
        for item in generate_dataset(t, 0).items {
            let expected: Vec<String> = item
                .gold
                .concepts
                .iter()
                .map(|c| {
                    let mut words: Vec<&str> = c.attributes.iter().map(|a| a.surface.as_str()).collect();
                    words.push(&c.concept.surface);
                    format!("{}?", words.join(" "))
                })
                .collect();
            let got = blip_vqa_questions(&item.gold);
            questions += got.len();
            assert_eq!(got, expected, "{:?}", item.text);
        }
    }
    let script = internvl_protocol("a red car and a blue bench");
    let golden = |name: &str| {
        std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("../bench/tests/data")
                .join(name),
        )
        .unwrap()
    };
    assert_eq!(script.round1, golden("internvl_round1.txt"), "round 1");
    assert_eq!(script.round2, golden("internvl_round2_red_car.txt"), "round 2");
    format!("{questions} questions in the attribute-concept format, both protocol rounds equal the golden text")
}

fn determinism() -> String {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let g = cmd_generate(
        &GenerateArgs {
            prompt: Some("a white shirt bear and gray hat mouse".into()),
            seed: Some(7),
            dump_attn: Some(true),
            out: Some(root.join("generate")),
            ..GenerateArgs::default()
        }
        .resolve()
        .unwrap(),
    )
    .unwrap();
    cmd_inspect(
        &InspectArgs {
            container: root.join("generate").join(CONTAINER_FILE),
            concept: None,
            threshold: 0.5,
            out: root.join("inspect"),
            scale: 4,
        }
        .resolve()
        .unwrap(),
    )
    .unwrap();
    let bench = |name: &str, args: BenchArgs| {
        cmd_bench(
            &BenchArgs {
                out: Some(root.join(name)),
                steps: Some(4),
                workers: Some(2),
                ..args
            }
            .resolve()
            .unwrap(),
        )
        .unwrap();
    };
    bench(
        "bench",
        BenchArgs {
            dataset: Some("wearing100".into()),
            prompts: Some(1),
            ..BenchArgs::default()
        },
    );
    bench(
        "sweep",
        BenchArgs {
            sweep: Some(true),
            prompts: Some(2),
            ..BenchArgs::default()
        },
    );
    let mut checked = Vec::new();
    for name in ["generate", "inspect", "bench", "sweep"] {
        let r = replay(
            &root.join(name).join(MANIFEST_FILE),
            Some(root.join(format!("{name}-replay"))),
        )
        .unwrap();
        assert_eq!(r.original.artifacts, r.replayed.artifacts, "{name}");
        checked.push(format!("{name} ({} artifacts)", r.replayed.artifacts.len()));
    }
    assert!(g.manifest.artifacts.contains_key(CONTAINER_FILE));
    format!("replayed manifests reproduce identical hashes: {}", checked.join(", "))
}

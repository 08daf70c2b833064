use std::collections::BTreeMap;
use std::collections::BTreeSet;

use spdiffusion::extraction::extract;
use spdiffusion::pipeline::{pass1_record, prepare, run_plain, DenoiserBackend, PipelineConfig, ToyDenoiser};
use spdiffusion::prompt::Template;
use spdiffusion::protect::build_sp_mask;
use spdiffusion_bench::ablation::{assignment_mask, swap_groups, token_mask_ablation, RegionAssignment};
use spdiffusion_bench::dataset::generate_dataset;
use spdiffusion_bench::evaluate::Method;
use spdiffusion_bench::report::read_items;
use spdiffusion_bench::run::{run_benchmark, BenchManifest, BenchPlan, RunStatus, ITEMS_FILE};
use spdiffusion_bench::scenario::{Scenario, ScenarioConfig};
use spdiffusion_bench::scorer::StubScorer;
use spdiffusion_bench::sweep::{default_thresholds, threshold_sweep, PromptCase, SweepCase, SweepContext, SweepMode};

const PROMPT: &str = "a red car and a blue bench";

fn small_plan(prompts: usize) -> BenchPlan {
    let mut d = generate_dataset(Template::Cc500, 0);
    d.items.truncate(prompts);
    BenchPlan {
        datasets: vec![d],
        methods: Method::ALL.to_vec(),
        pipeline: PipelineConfig {
            total_steps: 6,
            ..PipelineConfig::default()
        },
        workers: 2,
        limit: None,
    }
}

#[test]
fn sweep_has_one_point_per_threshold_and_mode() {
    let backend = ToyDenoiser::default();
    let cases: Vec<SweepCase> = (0..2)
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
    let thresholds = default_thresholds();
    let report = threshold_sweep(&cases, &thresholds, &SweepMode::ALL, &ctx).unwrap();
    for mode in SweepMode::ALL {
        let curve = report.curve(mode);
        assert_eq!(curve.iter().map(|p| p.0).collect::<Vec<_>>(), thresholds);
        assert!(curve.iter().all(|p| (0.0..=100.0).contains(&p.1)));
    }
    assert_eq!(report.items.len(), 2 * 9 * 2);
    assert!(report.points.iter().all(|p| p.scored == 2 && p.failed == 0));
    assert!(report.to_table().lines().count() == 10);
}

#[test]
fn prompt_sweep_runs_on_the_toy_backend() {
    let backend = ToyDenoiser::default();
    let cfg = PipelineConfig {
        total_steps: 6,
        ..PipelineConfig::default()
    };
    let case = PromptCase::new("cc500-0".into(), PROMPT, 1, &cfg, &backend).unwrap();
    let ctx = SweepContext {
        backend: &backend,
        pipeline: cfg,
        scorer: &StubScorer,
        workers: 1,
    };
    let report = threshold_sweep(&[SweepCase::Prompt(Box::new(case))], &[0.2, 0.5], &SweepMode::ALL, &ctx).unwrap();
    assert_eq!(report.points.len(), 4);
    // Binding is judged in the SP-Extraction reference regions, where the
    // SP-Extraction mask at its own thresholds removes all leakage.
    let sp = report.curve(SweepMode::SpExtraction);
    assert!(sp.iter().all(|p| p.1.is_finite()));
    assert_eq!(sp[0].1, 100.0);
}

#[test]
fn empty_assignment_is_a_plain_run() {
    let backend = ToyDenoiser::default();
    let cfg = PipelineConfig {
        seed: 3,
        ..PipelineConfig::default()
    };
    let out = token_mask_ablation(PROMPT, &[], &cfg, &backend).unwrap();
    let plain = run_plain(&cfg, &prepare(&backend, PROMPT).unwrap(), &backend).unwrap();
    assert_eq!(out.output.latent, plain.latent);
    assert!(out.sp_mask.is_none());
}

#[test]
fn hand_assignment_reproduces_extracted_mask() {
    let backend = ToyDenoiser::default();
    let cfg = PipelineConfig::default();
    let prepared = prepare(&backend, PROMPT).unwrap();
    let pass1 = pass1_record(&cfg, &prepared, &backend).unwrap();
    let regions = extract(&pass1.records, &prepared.parsed, &cfg.extraction).unwrap();
    let oracle = build_sp_mask(&regions, &prepared.parsed).unwrap();
    let assignments: Vec<RegionAssignment> = regions
        .regions
        .iter()
        .enumerate()
        .map(|(k, r)| RegionAssignment {
            label: prepared.parsed.concepts[k].concept.surface.clone(),
            rect: None,
            positions: r.positions().collect(),
            tokens: prepared.parsed.foreign_tokens(k),
        })
        .collect();
    let manual = assignment_mask(regions.grid, prepared.tokens.len(), &assignments).unwrap();
    for p in 0..regions.grid.len() {
        for t in 0..prepared.tokens.len() {
            assert_eq!(
                manual.values()[[p, t]].to_bits(),
                oracle.values()[[p, t]].to_bits(),
                "({p}, {t})"
            );
        }
    }
}

#[test]
fn swap_experiment_exchanges_which_region_excludes_which_concept() {
    let backend = ToyDenoiser::default();
    let cfg = PipelineConfig::default();
    let prepared = prepare(&backend, PROMPT).unwrap();
    let grid = backend.latent_grid();
    let car = prepared.parsed.concepts[0].protected_tokens();
    let bench = prepared.parsed.concepts[1].protected_tokens();
    let assignments = vec![
        RegionAssignment {
            label: "left".into(),
            rect: Some([0, 0, grid.w / 2, grid.h]),
            positions: Vec::new(),
            tokens: bench.clone(),
        },
        RegionAssignment {
            label: "right".into(),
            rect: Some([grid.w / 2, 0, grid.w, grid.h]),
            positions: Vec::new(),
            tokens: car.clone(),
        },
    ];
    let a = token_mask_ablation(PROMPT, &assignments, &cfg, &backend).unwrap();
    let b = token_mask_ablation(PROMPT, &swap_groups(&assignments, 0, 1), &cfg, &backend).unwrap();
    let (ma, mb) = (a.sp_mask.unwrap(), b.sp_mask.unwrap());
    let left = grid.index(0, 0);
    let right = grid.index(grid.w - 1, 0);
    let masked = |m: &spdiffusion::protect::SpMask, p| -> BTreeSet<usize> {
        (0..m.token_count()).filter(|&t| m.is_masked(p, t)).collect()
    };
    assert_eq!(masked(&ma, left), bench);
    assert_eq!(masked(&mb, left), car);
    assert_eq!(masked(&mb, right), bench);
    assert_eq!(a.backend_steps, 22);
    assert_ne!(a.output.latent, b.output.latent);
}

#[test]
fn summary_equals_brute_force_reaggregation() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_plan(2);
    let backend = ToyDenoiser::default();
    let outcome = run_benchmark(&plan, &backend, &StubScorer, dir.path()).unwrap();
    assert_eq!(outcome.newly_scored, 2 * 4 * 2);
    assert_eq!(outcome.manifest.status, RunStatus::Complete);

    let items = read_items(&dir.path().join(ITEMS_FILE)).unwrap();
    let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for i in &items {
        let e = sums.entry(i.method.slug()).or_default();
        e.0 += i.blip.unwrap();
        e.1 += i.internvl.unwrap();
        e.2 += 1;
    }
    for row in &outcome.report.summary {
        let (b, v, n) = sums[row.method.slug()];
        assert_eq!(n, 8);
        assert!((row.blip.unwrap() - b / n as f64).abs() < 1e-12);
        assert!((row.internvl.unwrap() - v / n as f64).abs() < 1e-9);
    }
    let spd = outcome
        .report
        .summary
        .iter()
        .find(|r| r.method == Method::SpDiffusion)
        .unwrap();
    let base = outcome
        .report
        .summary
        .iter()
        .find(|r| r.method == Method::Baseline)
        .unwrap();
    assert!(spd.blip.unwrap() >= base.blip.unwrap());
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(csv.starts_with("method,CC-500 BLIP-VQA,CC-500 InternVL-VQA\n"));
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let plan = small_plan(1);
    let backend = ToyDenoiser::default();

    let full = tempfile::tempdir().unwrap();
    let reference = run_benchmark(&plan, &backend, &StubScorer, full.path()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = run_benchmark(
        &BenchPlan {
            limit: Some(3),
            ..plan.clone()
        },
        &backend,
        &StubScorer,
        dir.path(),
    )
    .unwrap();
    assert_eq!(first.newly_scored, 3);
    let manifest = BenchManifest::load(dir.path()).unwrap().unwrap();
    assert_eq!(manifest.status, RunStatus::Partial);
    assert_eq!(manifest.completed_items, 3);

    // Simulate a write cut off mid-line.
    let path = dir.path().join(ITEMS_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"dataset\":\"Cc5");
    std::fs::write(&path, text).unwrap();

    let second = run_benchmark(&plan, &backend, &StubScorer, dir.path()).unwrap();
    assert_eq!(second.newly_scored, 8 - 3);
    assert_eq!(second.manifest.status, RunStatus::Complete);
    assert_eq!(second.report.items, reference.report.items);
    assert_eq!(second.report.summary, reference.report.summary);

    // The cut-off line is gone after compaction, so a third run reads cleanly.
    let third = run_benchmark(&plan, &backend, &StubScorer, dir.path()).unwrap();
    assert_eq!(third.newly_scored, 0);
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(full.path().join(ITEMS_FILE)).unwrap()
    );
}

//! The `spdiff` command line: generation, attention inspection, benchmark
//! runs and manifest replay.

pub mod backend;
pub mod bench;
pub mod config;
pub mod error;
pub mod generate;
pub mod inspect;
pub mod manifest;
pub mod render;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, Result};

use crate::bench::{cmd_bench, BenchArgs, BenchKind};
use crate::generate::{cmd_generate, GenerateArgs};
use crate::inspect::{cmd_inspect, InspectArgs};
use crate::manifest::{replay, MANIFEST_FILE};

/// Exit status of a bench run that finished with failed items.
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "spdiff",
    version,
    about = "Semantic-protection diffusion: generate, inspect, benchmark"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one image, optionally dumping attention and regions
    Generate(GenerateArgs),
    /// Render attention heatmaps and threshold overlays from a container
    Inspect(InspectArgs),
    /// Score prompt sets, sweep thresholds or run a token-mask ablation
    Bench(BenchArgs),
    /// Re-run a manifest and compare artifact hashes
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// A manifest.json written by any command
    pub manifest: PathBuf,
    /// Empty output directory [default: replay/ beside the manifest]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one command and returns the process exit status.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Generate(args) => {
            let s = args.resolve()?;
            let o = cmd_generate(&s)?;
            let d = &o.report.diagnostics;
            match &d.skipped_because {
                None => println!(
                    "protected {} concept(s) in {} backend steps ({})",
                    d.concept_count, d.backend_steps, o.report.mode
                ),
                Some(why) => println!("unprotected run ({why}), {} backend steps", d.backend_steps),
            }
            println!("wrote {}", s.out.join(MANIFEST_FILE).display());
            Ok(0)
        }
        Command::Inspect(args) => {
            let s = args.resolve()?;
            let o = cmd_inspect(&s)?;
            for v in &o.summary.concepts {
                println!(
                    "concept {} ({}): cross [{:.4}, {:.4}], self [{:.4}, {:.4}], {} point(s) in {} blob(s) at {}",
                    v.concept,
                    v.surface,
                    v.cross.min,
                    v.cross.max,
                    v.self_attn.min,
                    v.self_attn.max,
                    v.points,
                    v.components,
                    s.threshold
                );
            }
            println!("wrote {}", s.out.join(MANIFEST_FILE).display());
            Ok(0)
        }
        Command::Bench(args) => {
            let s = args.resolve()?;
            let o = cmd_bench(&s)?;
            match &o.kind {
                BenchKind::Benchmark {
                    status,
                    completed,
                    total,
                } => {
                    println!("{completed}/{total} item(s) scored, run {status:?}");
                }
                BenchKind::Sweep { points } => println!("{points} sweep point(s)"),
                BenchKind::Ablation { swapped } => {
                    println!("ablation{}", if *swapped { " and swapped ablation" } else { "" });
                }
            }
            for f in o.manifest.artifacts.keys() {
                println!("wrote {}", s.out.join(f).display());
            }
            if o.failed > 0 {
                eprintln!(
                    "{} item(s) failed to score; rerun the same command to retry them",
                    o.failed
                );
                return Ok(EXIT_PARTIAL);
            }
            Ok(0)
        }
        Command::Replay(args) => {
            let r = replay(&args.manifest, args.out)?;
            println!(
                "replay matches: {} artifact(s) identical in {}",
                r.replayed.artifacts.len(),
                r.replayed.invocation.out_dir().display()
            );
            Ok(0)
        }
    }
}

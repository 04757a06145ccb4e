use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use seqlab_cli::config::ExperimentConfig;
use seqlab_cli::plot::{plot_file, PlotKind};
use seqlab_cli::preview::augment_preview;
use seqlab_cli::run::run_experiment;
use seqlab_cli::summary::{compare_dirs, render_comparison};
use seqlab_core::augment::{AugmentConfig, AugmentLevel};

#[derive(Parser)]
#[command(name = "seqlab", version, about = "Semi-supervised learning experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics, checkpoints and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Side-by-side table of two run directories' summaries.
    Compare { dir_a: PathBuf, dir_b: PathBuf },
    /// Render a metrics or reliability CSV as SVG.
    Plot {
        #[arg(long)]
        kind: PlotKind,
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Augment one PGM/PPM image with the weak, medium or strong policy.
    AugmentPreview {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        policy: AugmentLevel,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed_override } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed_override {
                cfg.seeds = vec![seed];
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let records = run_experiment(&cfg, &out).with_context(|| format!("running {}", config.display()))?;
            for r in &records {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "seed {}: final_error {} best_error {} final_ece {}",
                    r.seed,
                    fmt(r.final_error),
                    fmt(r.best_error),
                    fmt(r.final_ece)
                );
            }
            println!("wrote {}", out.join("summary.csv").display());
        }
        Command::Compare { dir_a, dir_b } => {
            let rows = compare_dirs(&dir_a, &dir_b)?;
            print!("{}", render_comparison(&rows, &dir_a.display().to_string(), &dir_b.display().to_string()));
        }
        Command::Plot { kind, csv, out } => {
            plot_file(kind, &csv, &out)?;
            println!("wrote {}", out.display());
        }
        Command::AugmentPreview { input, policy, seed, out } => {
            augment_preview(&input, policy, seed, &out, &AugmentConfig::default())?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Executes an experiment: one training job per seed, then a summary.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use seqlab_core::data::{load_directory, make_long_tail, make_split, synth_blobs, Dataset, Split};
use seqlab_core::metrics::reliability_csv;
use seqlab_core::model::{Mlp, ModelConfig};
use seqlab_core::train::{train_loop, TrainOutcome};

use crate::config::{DataSource, ExperimentConfig, SplitMode};
use crate::summary::{summarize, write_summary, SeedRecord};

/// Environment variable capping how many seeds train concurrently.
pub const THREADS_ENV: &str = "SEQLAB_THREADS";

pub struct Datasets {
    pub pool: Dataset,
    pub test: Option<Dataset>,
}

pub fn load_datasets(source: &DataSource) -> Result<Datasets> {
    match source {
        DataSource::Synthetic {
            classes,
            per_class,
            side,
            noise,
            seed,
            test_per_class,
            test_seed,
        } => Ok(Datasets {
            pool: synth_blobs(*classes, *per_class, *side, *noise, *seed)?,
            test: Some(synth_blobs(*classes, *test_per_class, *side, *noise, *test_seed)?),
        }),
        DataSource::Directory { path, test_path } => {
            let pool = load_directory(path).with_context(|| format!("loading {}", path.display()))?;
            let test = test_path
                .as_ref()
                .map(|p| load_directory(p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            Ok(Datasets { pool, test })
        }
    }
}

pub fn build_split(cfg: &ExperimentConfig, pool: &Dataset, seed: u64) -> Result<Split> {
    Ok(match &cfg.split {
        SplitMode::Standard(spec) => make_split(pool, &seqlab_core::data::SplitSpec { seed, ..*spec })?,
        SplitMode::LongTail(spec) => {
            let mut spec = *spec;
            spec.num_classes = pool.num_classes();
            make_long_tail(pool, &spec, seed)?
        }
    })
}

pub fn model_for(cfg: &ExperimentConfig, pool: &Dataset, seed: u64) -> Result<Mlp> {
    let Some((h, w, c)) = pool.image_shape() else {
        bail!("dataset `{}` is empty", pool.name);
    };
    let mut mc = ModelConfig::new(h * w * c, cfg.hidden_dims.clone(), pool.num_classes());
    mc.init_seed = seed;
    mc.init_scale = cfg.init_scale;
    Ok(Mlp::new(mc)?)
}

/// Trains one seed: the split, the initialization and every stochastic
/// choice of the loop derive from `seed`.
pub fn run_seed(cfg: &ExperimentConfig, data: &Datasets, seed: u64) -> Result<TrainOutcome> {
    let split = build_split(cfg, &data.pool, seed)?;
    let model = model_for(cfg, &data.pool, seed)?;
    let train = seqlab_core::train::TrainConfig { seed, ..cfg.train.clone() };
    Ok(train_loop(&model, &train, &split, data.test.as_ref())?)
}

pub fn metrics_file_name(seed: u64) -> String {
    format!("metrics_{seed}.csv")
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => bail!("{THREADS_ENV} must be a positive integer, got `{v}`"),
        },
    }
}

/// Runs every seed (concurrently, up to `SEQLAB_THREADS` jobs) and writes
/// `metrics_<seed>.csv`, `seed_<seed>/ckpt_<iter>.bin`,
/// `seed_<seed>/reliability.csv` and `summary.csv` under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SeedRecord>> {
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.is_empty() {
        bail!("no seeds configured");
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let data = load_datasets(&cfg.data)?;

    let job = |&seed: &u64| -> Result<SeedRecord> {
        let outcome = run_seed(cfg, &data, seed).with_context(|| format!("seed {seed}"))?;
        outcome.write_metrics(&out.join(metrics_file_name(seed)))?;
        let dir = seed_dir(out, seed);
        outcome.write_checkpoints(&dir)?;
        if let Some(eval) = &outcome.final_eval {
            let path = dir.join("reliability.csv");
            std::fs::write(&path, reliability_csv(&eval.calibration))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(SeedRecord::from_rows(seed, &outcome.rows))
    };

    let records: Vec<SeedRecord> = match thread_cap()? {
        Some(1) => seeds.iter().map(job).collect::<Result<_>>()?,
        cap => {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = cap {
                builder = builder.num_threads(n);
            }
            let pool = builder.build().context("starting worker pool")?;
            pool.install(|| seeds.par_iter().map(job).collect::<Result<_>>())?
        }
    };
    write_summary(&out.join("summary.csv"), &summarize(&records))?;
    Ok(records)
}

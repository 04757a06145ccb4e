//! Flat `key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys carry a section
//! prefix (`train.`, `model.`, `data.`, `split.`, `longtail.`, `augment.`,
//! `eval.`, `output.`) except for the top-level `seeds` list. Unknown or
//! repeated keys are rejected with their line number.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use seqlab_core::augment::Interpolation;
use seqlab_core::data::{LongTailSpec, SplitSpec};
use seqlab_core::problib::SharpenMode;
use seqlab_core::train::{Algorithm, TrainConfig, WeightDecayMode};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Synthetic blobs; train pool and test set use different seeds.
    Synthetic {
        classes: usize,
        per_class: usize,
        side: usize,
        noise: f64,
        seed: u64,
        test_per_class: usize,
        test_seed: u64,
    },
    /// A directory of PGM/PPM files with `labels.tsv`, plus an optional test
    /// directory in the same layout.
    Directory { path: PathBuf, test_path: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitMode {
    Standard(SplitSpec),
    /// Long-tailed subsampling; its seed is the run seed.
    LongTail(LongTailSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Seed-independent training settings; `seed` is replaced per run.
    pub train: TrainConfig,
    pub hidden_dims: Vec<usize>,
    pub init_scale: f64,
    pub data: DataSource,
    /// The split seed is replaced by the run seed.
    pub split: SplitMode,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "seeds",
    "output.dir",
    "train.algorithm",
    "train.preset",
    "train.batch_size",
    "train.mu",
    "train.tau",
    "train.temperature",
    "train.lambda_u",
    "train.lr0",
    "train.momentum",
    "train.weight_decay",
    "train.weight_decay_mode",
    "train.ema_momentum",
    "train.total_iters",
    "train.eval_every",
    "train.log_every",
    "train.sharpen",
    "train.kl_weak_medium",
    "train.kl_medium_strong",
    "train.kl_weak_strong",
    "model.hidden_dims",
    "model.init_scale",
    "data.source",
    "data.path",
    "data.test_path",
    "data.classes",
    "data.per_class",
    "data.side",
    "data.noise",
    "data.seed",
    "data.test_per_class",
    "data.test_seed",
    "split.n_labels",
    "split.balanced",
    "split.include_labeled",
    "longtail.lambda",
    "longtail.n1",
    "longtail.beta",
    "augment.cutout_fraction",
    "augment.interpolation",
    "augment.bidirectional",
    "eval.ece_bins",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {lineno}: expected `key=value`, got `{line}`"))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                bail!("line {lineno}: unknown key `{key}`");
            }
            if let Some((first, _)) = map.insert(key.to_string(), (lineno, value.trim().to_string())) {
                bail!("line {lineno}: key `{key}` already set on line {first}");
            }
        }
        Ok(Self { map })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((lineno, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("line {lineno}: bad value `{v}` for `{key}`: {e}")),
        }
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((lineno, v)) = self.map.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("line {lineno}: bad list item `{s}` for `{key}`: {e}")))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(l, _)| *l)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;

        let algorithm: Algorithm = e.get("train.algorithm")?.unwrap_or(Algorithm::SequenceMatch);
        let mut train = match e.get::<String>("train.preset")?.as_deref() {
            None | Some("default") => TrainConfig::for_algorithm(algorithm),
            Some("large") => TrainConfig::large_preset(algorithm),
            Some(other) => bail!(
                "line {}: unknown preset `{other}` (expected default or large)",
                e.line_of("train.preset").unwrap_or(0)
            ),
        };
        e.set("train.batch_size", &mut train.batch_size)?;
        e.set("train.mu", &mut train.mu)?;
        e.set("train.tau", &mut train.tau)?;
        e.set("train.temperature", &mut train.temperature)?;
        e.set("train.lambda_u", &mut train.lambda_u)?;
        e.set("train.lr0", &mut train.lr0)?;
        e.set("train.momentum", &mut train.momentum)?;
        e.set("train.weight_decay", &mut train.weight_decay)?;
        e.set::<WeightDecayMode>("train.weight_decay_mode", &mut train.weight_decay_mode)?;
        e.set("train.ema_momentum", &mut train.ema_momentum)?;
        e.set("train.total_iters", &mut train.total_iters)?;
        e.set("train.eval_every", &mut train.eval_every)?;
        e.set("train.log_every", &mut train.log_every)?;
        e.set::<SharpenMode>("train.sharpen", &mut train.sharpen)?;
        e.set("train.kl_weak_medium", &mut train.kl_weights.weak_medium)?;
        e.set("train.kl_medium_strong", &mut train.kl_weights.medium_strong)?;
        e.set("train.kl_weak_strong", &mut train.kl_weights.weak_strong)?;
        e.set("augment.cutout_fraction", &mut train.augment.cutout_fraction)?;
        e.set::<Interpolation>("augment.interpolation", &mut train.augment.interpolation)?;
        e.set("augment.bidirectional", &mut train.augment.bidirectional_enhance)?;
        e.set("eval.ece_bins", &mut train.ece_bins)?;
        train.validate().context("invalid training settings")?;

        let hidden_dims = e.list("model.hidden_dims")?.unwrap_or_else(|| vec![64]);
        let init_scale = e.get("model.init_scale")?.unwrap_or(seqlab_core::model::DEFAULT_INIT_SCALE);

        let source: String = e.get("data.source")?.unwrap_or_else(|| "synthetic".into());
        let data = match source.as_str() {
            "synthetic" => {
                let seed = e.get("data.seed")?.unwrap_or(0);
                DataSource::Synthetic {
                    classes: e.get("data.classes")?.unwrap_or(4),
                    per_class: e.get("data.per_class")?.unwrap_or(1000),
                    side: e.get("data.side")?.unwrap_or(8),
                    noise: e.get("data.noise")?.unwrap_or(0.6),
                    seed,
                    test_per_class: e.get("data.test_per_class")?.unwrap_or(250),
                    test_seed: e.get("data.test_seed")?.unwrap_or(seed.wrapping_add(1)),
                }
            }
            "directory" => {
                let path = e
                    .get::<PathBuf>("data.path")?
                    .ok_or_else(|| anyhow!("data.source=directory needs data.path"))?;
                DataSource::Directory {
                    path,
                    test_path: e.get("data.test_path")?,
                }
            }
            other => bail!(
                "line {}: unknown data source `{other}` (expected synthetic or directory)",
                e.line_of("data.source").unwrap_or(0)
            ),
        };

        let split = if e.has_prefix("longtail.") {
            let classes = match &data {
                DataSource::Synthetic { classes, .. } => *classes,
                DataSource::Directory { .. } => 0,
            };
            SplitMode::LongTail(LongTailSpec {
                lambda_imb: e.get("longtail.lambda")?.unwrap_or(100.0),
                n1: e.get("longtail.n1")?.unwrap_or(1000),
                num_classes: classes,
                beta: e.get("longtail.beta")?.unwrap_or(0.2),
            })
        } else {
            SplitMode::Standard(SplitSpec {
                n_labels: e.get("split.n_labels")?.unwrap_or(40),
                balanced: e.get("split.balanced")?.unwrap_or(true),
                seed: 0,
                include_labeled_in_unlabeled: e.get("split.include_labeled")?.unwrap_or(true),
            })
        };

        Ok(Self {
            train,
            hidden_dims,
            init_scale,
            data,
            split,
            output_dir: e.get("output.dir")?.unwrap_or_else(|| PathBuf::from("runs")),
            seeds: e.list("seeds")?.unwrap_or_else(|| vec![0]),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }
}

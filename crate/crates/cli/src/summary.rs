//! Cross-seed summaries and side-by-side comparison of two runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use seqlab_core::train::MetricsRow;

/// Per-seed quantities that enter the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRecord {
    pub seed: u64,
    /// Evaluation error at the last evaluated row.
    pub final_error: Option<f64>,
    /// Minimum evaluation error over all evaluated rows.
    pub best_error: Option<f64>,
    pub final_ece: Option<f64>,
    /// Mean of the utilization column over all logged rows.
    pub mean_utilization: Option<f64>,
    /// Mean of the mask-ratio column over rows that have one.
    pub mean_mask_ratio: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

impl SeedRecord {
    pub fn from_rows(seed: u64, rows: &[MetricsRow]) -> Self {
        let evaluated: Vec<&MetricsRow> = rows.iter().filter(|r| r.eval_error.is_some()).collect();
        let utilization: Vec<f64> = rows.iter().map(|r| r.utilization).collect();
        let masks: Vec<f64> = rows.iter().filter_map(|r| r.mask_ratio).collect();
        Self {
            seed,
            final_error: evaluated.last().and_then(|r| r.eval_error),
            best_error: evaluated.iter().filter_map(|r| r.eval_error).reduce(f64::min),
            final_ece: evaluated.last().and_then(|r| r.eval_ece),
            mean_utilization: mean(&utilization),
            mean_mask_ratio: mean(&masks),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single seed.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        let m = mean(values)?;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat { mean: m, std, n })
    }
}

pub const SUMMARY_HEADER: [&str; 4] = ["metric", "mean", "std", "n"];

/// Summary metrics in output order.
pub const SUMMARY_METRICS: [&str; 5] = ["final_error", "best_error", "final_ece", "mean_utilization", "mean_mask_ratio"];

pub type Summary = Vec<(String, Stat)>;

/// Statistics over seeds; metrics no seed reports are omitted.
pub fn summarize(records: &[SeedRecord]) -> Summary {
    let pick: [fn(&SeedRecord) -> Option<f64>; 5] = [
        |r| r.final_error,
        |r| r.best_error,
        |r| r.final_ece,
        |r| r.mean_utilization,
        |r| r.mean_mask_ratio,
    ];
    SUMMARY_METRICS
        .iter()
        .zip(pick)
        .filter_map(|(name, f)| {
            let values: Vec<f64> = records.iter().filter_map(f).collect();
            Stat::of(&values).map(|s| (name.to_string(), s))
        })
        .collect()
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(SUMMARY_HEADER)?;
    for (name, s) in summary {
        w.write_record([name.clone(), s.mean.to_string(), s.std.to_string(), s.n.to_string()])?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<BTreeMap<String, Stat>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading summary {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SUMMARY_HEADER {
        bail!("{}: expected columns {:?}, found {:?}", path.display(), SUMMARY_HEADER, header);
    }
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let field = |k: usize| -> Result<&str> { rec.get(k).ok_or_else(|| anyhow!("{}: short row {}", path.display(), i + 2)) };
        let parse = |k: usize| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|e| anyhow!("{}: row {}: {e}", path.display(), i + 2))
        };
        let stat = Stat {
            mean: parse(1)?,
            std: parse(2)?,
            n: field(3)?.parse().map_err(|e| anyhow!("{}: row {}: {e}", path.display(), i + 2))?,
        };
        let name = field(0)?;
        if !SUMMARY_METRICS.contains(&name) {
            bail!("{}: row {}: unknown metric `{name}`", path.display(), i + 2);
        }
        out.insert(name.to_string(), stat);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: Option<Stat>,
    pub b: Option<Stat>,
}

impl ComparisonRow {
    /// `b - a` of the means, when both runs report the metric.
    pub fn diff(&self) -> Option<f64> {
        Some(self.b?.mean - self.a?.mean)
    }
}

/// Aligns the summaries of two run directories. A metric only one run
/// reports (e.g. mask ratio of a supervised run) appears with a gap.
pub fn compare_dirs(dir_a: &Path, dir_b: &Path) -> Result<Vec<ComparisonRow>> {
    let a = read_summary(&dir_a.join("summary.csv"))?;
    let b = read_summary(&dir_b.join("summary.csv"))?;
    Ok(SUMMARY_METRICS
        .iter()
        .filter(|m| a.contains_key(**m) || b.contains_key(**m))
        .map(|m| ComparisonRow {
            metric: m.to_string(),
            a: a.get(*m).copied(),
            b: b.get(*m).copied(),
        })
        .collect())
}

pub fn render_comparison(rows: &[ComparisonRow], label_a: &str, label_b: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:>22} {:>22} {:>12}", "metric", label_a, label_b, "diff (b-a)");
    for r in rows {
        let cell = |s: Option<Stat>| s.map_or("-".to_string(), |s| format!("{:.4} +- {:.4}", s.mean, s.std));
        let diff = r.diff().map_or("-".to_string(), |d| format!("{d:+.4}"));
        let _ = writeln!(out, "{:<18} {:>22} {:>22} {:>12}", r.metric, cell(r.a), cell(r.b), diff);
    }
    out
}

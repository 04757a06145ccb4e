//! Classification metrics, calibration and semi-supervised diagnostics.

use std::fmt::Write as _;

use crate::problib::{confidence_mask, ProbDist};
use crate::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 15;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().enumerate().all(|(j, &c)| i == j || c == 0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyReport {
    pub error_rate: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
    /// Recall per class; `None` for classes absent from the true labels.
    pub class_wise_accuracy: Vec<Option<f64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(labels: &[usize], probs: &[ProbDist]) -> Result<usize> {
    if labels.is_empty() || labels.len() != probs.len() {
        return Err(Error::param(format!(
            "need equal non-empty label and prediction lists, got {} and {}",
            labels.len(),
            probs.len()
        )));
    }
    let classes = probs[0].len();
    if let Some(i) = probs.iter().position(|p| p.len() != classes) {
        return Err(Error::param(format!("prediction {i} has {} classes, expected {classes}", probs[i].len())));
    }
    if let Some(i) = labels.iter().position(|&l| l >= classes) {
        return Err(Error::param(format!("label {} of sample {i} exceeds {classes} classes", labels[i])));
    }
    Ok(classes)
}

/// Error rate, macro precision / recall / F1, confusion matrix and per-class
/// accuracy.
///
/// Macro averages run over classes that occur in the labels or predictions.
/// A class never predicted contributes precision 0; a class never present
/// contributes recall 0.
pub fn classify_metrics(labels: &[usize], probs: &[ProbDist]) -> Result<ClassifyReport> {
    let classes = check_inputs(labels, probs)?;
    let mut confusion = ConfusionMatrix::new(classes);
    for (&t, p) in labels.iter().zip(probs) {
        confusion.record(t, p.argmax());
    }
    let n = confusion.total();
    let mut sums = (0.0, 0.0, 0.0);
    let mut active = 0usize;
    let mut class_wise_accuracy = Vec::with_capacity(classes);
    for k in 0..classes {
        let tp = confusion.counts[k][k];
        let (support, predicted) = (confusion.row_sum(k), confusion.col_sum(k));
        class_wise_accuracy.push((support > 0).then(|| ratio(tp, support)));
        if support == 0 && predicted == 0 {
            continue;
        }
        active += 1;
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        sums.0 += precision;
        sums.1 += recall;
        sums.2 += f1;
    }
    let a = active as f64;
    Ok(ClassifyReport {
        error_rate: 1.0 - ratio(confusion.trace(), n),
        macro_precision: sums.0 / a,
        macro_recall: sums.1 / a,
        macro_f1: sums.2 / a,
        confusion,
        class_wise_accuracy,
    })
}

/// Mid-ranks (1-based) of `scores`; tied values share their average rank.
fn mid_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// One-vs-rest ROC AUC of a single score column via the rank-sum statistic.
pub fn binary_auc(positive: &[bool], scores: &[f64]) -> Result<f64> {
    if positive.len() != scores.len() {
        return Err(Error::param("auc needs one score per sample"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("auc needs both positive and negative samples".into()));
    }
    let ranks = mid_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Macro average of the one-vs-rest AUC of every class.
pub fn macro_auc(labels: &[usize], probs: &[ProbDist]) -> Result<f64> {
    let classes = check_inputs(labels, probs)?;
    if let Some(k) = (0..classes).find(|k| !labels.contains(k)) {
        return Err(Error::Metric(format!("class {k} has no samples, auc undefined")));
    }
    if classes < 2 {
        return Err(Error::Metric("auc needs at least two classes".into()));
    }
    let mut total = 0.0;
    for k in 0..classes {
        let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        let scores: Vec<f64> = probs.iter().map(|p| p.probs()[k]).collect();
        total += binary_auc(&positive, &scores)?;
    }
    Ok(total / classes as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub bin_edges: Vec<f64>,
    /// Mean confidence per bin, 0 for empty bins.
    pub bin_confidence: Vec<f64>,
    /// Accuracy per bin, 0 for empty bins.
    pub bin_accuracy: Vec<f64>,
    pub bin_counts: Vec<usize>,
    pub ece: f64,
}

/// Bin of confidence `c` among `m` equal bins with right-closed edges
/// `(k/m, (k+1)/m]`; the first bin also holds 0.
pub fn calibration_bin(c: f64, edges: &[f64]) -> usize {
    let m = edges.len() - 1;
    let mut k = ((c * m as f64).ceil() as usize).saturating_sub(1).min(m - 1);
    while k > 0 && c <= edges[k] {
        k -= 1;
    }
    while k + 1 < m && c > edges[k + 1] {
        k += 1;
    }
    k
}

pub fn calibration(labels: &[usize], probs: &[ProbDist], bins: usize) -> Result<CalibrationReport> {
    if bins == 0 {
        return Err(Error::param("calibration needs at least one bin"));
    }
    if labels.len() != probs.len() {
        return Err(Error::param("calibration needs one label per prediction"));
    }
    let bin_edges: Vec<f64> = (0..=bins).map(|k| k as f64 / bins as f64).collect();
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    let mut bin_counts = vec![0usize; bins];
    for (&t, p) in labels.iter().zip(probs) {
        let c = p.max();
        let k = calibration_bin(c, &bin_edges);
        bin_counts[k] += 1;
        conf_sum[k] += c;
        correct[k] += usize::from(p.argmax() == t);
    }
    let n = labels.len() as f64;
    let mut bin_confidence = vec![0.0; bins];
    let mut bin_accuracy = vec![0.0; bins];
    let mut ece = 0.0;
    for k in 0..bins {
        if bin_counts[k] == 0 {
            continue;
        }
        let count = bin_counts[k] as f64;
        bin_confidence[k] = conf_sum[k] / count;
        bin_accuracy[k] = correct[k] as f64 / count;
        ece += count / n * (bin_accuracy[k] - bin_confidence[k]).abs();
    }
    Ok(CalibrationReport {
        bin_edges,
        bin_confidence,
        bin_accuracy,
        bin_counts,
        ece,
    })
}

pub const RELIABILITY_HEADER: &str = "bin_low,bin_high,count,mean_conf,mean_acc";

/// Reliability-diagram rows, one per bin.
pub fn reliability_csv(report: &CalibrationReport) -> String {
    let mut out = String::from(RELIABILITY_HEADER);
    out.push('\n');
    for k in 0..report.bin_counts.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            report.bin_edges[k],
            report.bin_edges[k + 1],
            report.bin_counts[k],
            report.bin_confidence[k],
            report.bin_accuracy[k]
        );
    }
    out
}

/// Which unlabeled samples carry training signal in a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilizationRule {
    /// Confident samples only (FixMatch, UDA).
    Confident,
    /// Every sample, through one of two branches (SequenceMatch).
    All,
    /// Unconfident samples only (low-confidence ablation).
    Unconfident,
    /// No unlabeled signal at all.
    Nothing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslRatios {
    /// Fraction of the batch whose weak confidence is below the threshold.
    pub mask_ratio: f64,
    pub utilization: f64,
    /// Accuracy of confident pseudo-labels; `None` when no truth was given
    /// or nothing was confident.
    pub pseudo_label_accuracy: Option<f64>,
}

pub fn ssl_ratios(
    weak: &[ProbDist],
    tau: f64,
    truths: Option<&[usize]>,
    rule: UtilizationRule,
) -> Result<SslRatios> {
    if weak.is_empty() {
        return Err(Error::param("ssl ratios need a non-empty batch"));
    }
    if truths.is_some_and(|t| t.len() != weak.len()) {
        return Err(Error::param("ssl ratios need one truth per unlabeled sample"));
    }
    let n = weak.len();
    let confident: Vec<bool> = weak.iter().map(|p| confidence_mask(p, tau)).collect();
    let n_conf = confident.iter().filter(|&&c| c).count();
    let n_unconf = n - n_conf;
    let mask_ratio = n_unconf as f64 / n as f64;
    let utilization = match rule {
        UtilizationRule::Confident => 1.0 - mask_ratio,
        UtilizationRule::All => 1.0,
        UtilizationRule::Unconfident => mask_ratio,
        UtilizationRule::Nothing => 0.0,
    };
    let pseudo_label_accuracy = match truths {
        Some(t) if n_conf > 0 => {
            let hits = (0..n).filter(|&i| confident[i] && weak[i].argmax() == t[i]).count();
            Some(hits as f64 / n_conf as f64)
        }
        _ => None,
    };
    Ok(SslRatios {
        mask_ratio,
        utilization,
        pseudo_label_accuracy,
    })
}

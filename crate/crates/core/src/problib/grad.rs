//! Loss values together with their gradients w.r.t. prediction logits.
//!
//! Predictions are `softmax(z)` of the logits `z`; targets and gates are
//! constants. For a (possibly soft) target `t`,
//! `d/dz_j [-sum_i t_i ln max(p_i, eps)] = S p_j - t_j [p_j > eps]` where
//! `S` sums `t_i` over the unclamped entries. Batch means carry their `1/N`
//! into every per-sample gradient.

use super::{
    check_lengths, confidence_mask, cross_entropy_hard, cross_entropy_soft, kl_div, sharpen_with, Gate,
    LossBreakdown, LossConfig, ProbDist, SharpenMode, LOG_FLOOR,
};
use crate::Result;

/// Per-sample gradients w.r.t. logits, one row per sample.
pub type LogitGrads = Vec<Vec<f64>>;

pub fn soft_ce_logit_grad(target: &[f64], p: &ProbDist) -> Vec<f64> {
    let probs = p.probs();
    let mass: f64 = target
        .iter()
        .zip(probs)
        .filter(|(_, &q)| q > LOG_FLOOR)
        .map(|(&t, _)| t)
        .sum();
    probs
        .iter()
        .zip(target)
        .map(|(&q, &t)| if q > LOG_FLOOR { mass * q - t } else { mass * q })
        .collect()
}

pub fn hard_ce_logit_grad(target: usize, p: &ProbDist) -> Vec<f64> {
    let probs = p.probs();
    if probs[target] > LOG_FLOOR {
        let mut g = probs.to_vec();
        g[target] -= 1.0;
        g
    } else {
        vec![0.0; probs.len()]
    }
}

fn scale(mut g: Vec<f64>, k: f64) -> Vec<f64> {
    g.iter_mut().for_each(|v| *v *= k);
    g
}

fn inv(n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        1.0 / n as f64
    }
}

fn mean(n: usize, terms: &[f64]) -> f64 {
    if n == 0 {
        0.0
    } else {
        terms.iter().sum::<f64>() / n as f64
    }
}

pub fn supervised_ce_grad(targets: &[usize], probs: &[ProbDist]) -> Result<(f64, LogitGrads)> {
    check_lengths("supervised_ce", &[targets.len(), probs.len()])?;
    let k = inv(targets.len());
    let mut terms = Vec::with_capacity(targets.len());
    let mut grads = Vec::with_capacity(targets.len());
    for (&t, p) in targets.iter().zip(probs) {
        terms.push(cross_entropy_hard(t, p)?);
        grads.push(scale(hard_ce_logit_grad(t, p), k));
    }
    Ok((mean(targets.len(), &terms), grads))
}

/// Gradient flows into `strong` only.
pub fn uda_unsup_loss_grad(
    weak: &[ProbDist],
    strong: &[ProbDist],
    tau: f64,
    temperature: f64,
) -> Result<(f64, LogitGrads)> {
    check_lengths("uda_unsup_loss", &[weak.len(), strong.len()])?;
    let k = inv(weak.len());
    let mut terms = Vec::with_capacity(weak.len());
    let mut grads = Vec::with_capacity(weak.len());
    for (w, s) in weak.iter().zip(strong) {
        if confidence_mask(w, tau) {
            let q = sharpen_with(w, temperature, SharpenMode::Exp)?;
            terms.push(cross_entropy_soft(&q, s));
            grads.push(scale(soft_ce_logit_grad(q.probs(), s), k));
        } else {
            terms.push(0.0);
            grads.push(vec![0.0; s.len()]);
        }
    }
    Ok((mean(weak.len(), &terms), grads))
}

pub fn fixmatch_unsup_loss_grad(weak: &[ProbDist], strong: &[ProbDist], tau: f64) -> Result<(f64, LogitGrads)> {
    check_lengths("fixmatch_unsup_loss", &[weak.len(), strong.len()])?;
    let k = inv(weak.len());
    let mut terms = Vec::with_capacity(weak.len());
    let mut grads = Vec::with_capacity(weak.len());
    for (w, s) in weak.iter().zip(strong) {
        if confidence_mask(w, tau) {
            let label = w.argmax();
            terms.push(cross_entropy_hard(label, s)?);
            grads.push(scale(hard_ce_logit_grad(label, s), k));
        } else {
            terms.push(0.0);
            grads.push(vec![0.0; s.len()]);
        }
    }
    Ok((mean(weak.len(), &terms), grads))
}

pub fn seqmatch_unsup_ce_grad(
    weak: &[ProbDist],
    strong: &[ProbDist],
    tau: f64,
    temperature: f64,
    mode: SharpenMode,
) -> Result<(f64, LogitGrads)> {
    check_lengths("seqmatch_unsup_ce", &[weak.len(), strong.len()])?;
    let k = inv(weak.len());
    let mut terms = Vec::with_capacity(weak.len());
    let mut grads = Vec::with_capacity(weak.len());
    for (w, s) in weak.iter().zip(strong) {
        if confidence_mask(w, tau) {
            let label = w.argmax();
            terms.push(cross_entropy_hard(label, s)?);
            grads.push(scale(hard_ce_logit_grad(label, s), k));
        } else {
            let q = sharpen_with(w, temperature, mode)?;
            terms.push(cross_entropy_soft(&q, s));
            grads.push(scale(soft_ce_logit_grad(q.probs(), s), k));
        }
    }
    Ok((mean(weak.len(), &terms), grads))
}

/// Gradient flows into `dst` only; `src` and `gate` are constants.
pub fn seqmatch_kl_pair_grad(
    src: &[ProbDist],
    dst: &[ProbDist],
    gate: &[ProbDist],
    tau: f64,
    temperature: f64,
) -> Result<(f64, LogitGrads)> {
    kl_pair_grad(src, dst, gate, tau, temperature, SharpenMode::Exp, Gate::Confident)
}

pub fn low_conf_kl_loss_grad(
    weak: &[ProbDist],
    strong: &[ProbDist],
    tau: f64,
    temperature: f64,
) -> Result<(f64, LogitGrads)> {
    kl_pair_grad(weak, strong, weak, tau, temperature, SharpenMode::Exp, Gate::Unconfident)
}

pub(crate) fn kl_pair_grad(
    src: &[ProbDist],
    dst: &[ProbDist],
    gate: &[ProbDist],
    tau: f64,
    temperature: f64,
    mode: SharpenMode,
    which: Gate,
) -> Result<(f64, LogitGrads)> {
    check_lengths("kl pair", &[src.len(), dst.len(), gate.len()])?;
    let k = inv(src.len());
    let mut terms = Vec::with_capacity(src.len());
    let mut grads = Vec::with_capacity(src.len());
    for ((s, d), g) in src.iter().zip(dst).zip(gate) {
        if which.open(g, tau) {
            let q = sharpen_with(s, temperature, mode)?;
            terms.push(kl_div(&q, d));
            // The entropy part of KL is constant in the logits of `d`.
            grads.push(scale(soft_ce_logit_grad(q.probs(), d), k));
        } else {
            terms.push(0.0);
            grads.push(vec![0.0; d.len()]);
        }
    }
    Ok((mean(src.len(), &terms), grads))
}

/// Gradients of the full objective, one block per differentiated stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectiveGrads {
    pub labeled: LogitGrads,
    pub medium: LogitGrads,
    pub strong: LogitGrads,
}

/// [`super::seqmatch_total_loss`] plus gradients w.r.t. the labeled, medium
/// and strong logits (the weak stream only supplies targets and gates).
pub fn seqmatch_total_loss_grad(
    labeled_targets: &[usize],
    labeled_probs: &[ProbDist],
    weak: &[ProbDist],
    medium: &[ProbDist],
    strong: &[ProbDist],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, ObjectiveGrads)> {
    check_lengths("seqmatch_total_loss labeled", &[labeled_targets.len(), labeled_probs.len()])?;
    check_lengths("seqmatch_total_loss unlabeled", &[weak.len(), medium.len(), strong.len()])?;
    let (tau, t, mode) = (cfg.tau, cfg.temperature, cfg.sharpen);
    let (l_sup, g_lab) = supervised_ce_grad(labeled_targets, labeled_probs)?;
    let (l_u_ce, g_ce) = seqmatch_unsup_ce_grad(weak, strong, tau, t, mode)?;
    let (l_kl_wm, g_wm) = kl_pair_grad(weak, medium, weak, tau, t, mode, Gate::Confident)?;
    let (l_kl_ms, g_ms) = kl_pair_grad(medium, strong, medium, tau, t, mode, Gate::Confident)?;
    let (l_kl_ws, g_ws) = kl_pair_grad(weak, strong, weak, tau, t, mode, Gate::Confident)?;
    let breakdown = super::assemble(l_sup, l_u_ce, l_kl_wm, l_kl_ms, l_kl_ws, cfg);

    let lam = cfg.lambda_u;
    let w = cfg.kl_weights;
    let medium_grads = g_wm
        .into_iter()
        .map(|g| scale(g, lam * w.weak_medium))
        .collect();
    let strong_grads = g_ce
        .into_iter()
        .zip(g_ms)
        .zip(g_ws)
        .map(|((ce, ms), ws)| {
            ce.iter()
                .zip(&ms)
                .zip(&ws)
                .map(|((a, b), c)| lam * (a + w.medium_strong * b + w.weak_strong * c))
                .collect()
        })
        .collect();
    Ok((
        breakdown,
        ObjectiveGrads {
            labeled: g_lab,
            medium: medium_grads,
            strong: strong_grads,
        },
    ))
}

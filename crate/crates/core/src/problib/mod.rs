//! Probability vectors and the loss family.
//!
//! All losses take *predictions* as [`ProbDist`]s and treat every target
//! (pseudo-labels, sharpened distributions, confidence gates) as a constant.
//! Logarithms are floored at [`LOG_FLOOR`]. Batch reductions sum in index
//! order, so results are bit-identical from run to run.
//!
//! The `*_grad` variants in [`grad`] return the same values together with the
//! gradient w.r.t. the prediction logits.

pub mod grad;

use crate::{Error, Result};

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance on the total mass of a [`ProbDist`].
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("logits must be non-empty"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logit {bad}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A probability vector over `L` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("probability vector must be non-empty"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::param(format!("probabilities must be finite and non-negative: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::param(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn one_hot(classes: usize, index: usize) -> Self {
        let mut v = vec![0.0; classes];
        v[index] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub class_index: usize,
    pub confidence: f64,
}

/// Per-term losses of one objective evaluation.
///
/// `total = l_sup + lambda_u * (l_u_ce + w_wm * l_kl_wm + w_ms * l_kl_ms + w_ws * l_kl_ws)`
/// with all KL weights 1 by default.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_u_ce: f64,
    pub l_kl_wm: f64,
    pub l_kl_ms: f64,
    pub l_kl_ws: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SharpenMode {
    /// `exp(p_i / T) / sum_k exp(p_k / T)` applied to the probabilities.
    #[default]
    Exp,
    /// `p_i^(1/T) / sum_k p_k^(1/T)`.
    Power,
}

impl std::str::FromStr for SharpenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exp" => Ok(Self::Exp),
            "power" => Ok(Self::Power),
            other => Err(Error::param(format!("unknown sharpen mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlWeights {
    pub weak_medium: f64,
    pub medium_strong: f64,
    pub weak_strong: f64,
}

impl Default for KlWeights {
    fn default() -> Self {
        Self {
            weak_medium: 1.0,
            medium_strong: 1.0,
            weak_strong: 1.0,
        }
    }
}

impl KlWeights {
    pub const ZERO: KlWeights = KlWeights {
        weak_medium: 0.0,
        medium_strong: 0.0,
        weak_strong: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub temperature: f64,
    pub lambda_u: f64,
    pub kl_weights: KlWeights,
    pub sharpen: SharpenMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            temperature: 0.5,
            lambda_u: 1.0,
            kl_weights: KlWeights::default(),
            sharpen: SharpenMode::Exp,
        }
    }
}

pub fn softmax(logits: &Logits) -> Result<ProbDist> {
    softmax_slice(logits.values())
}

/// Max-shifted softmax over a raw slice.
pub fn softmax_slice(z: &[f64]) -> Result<ProbDist> {
    if z.is_empty() {
        return Err(Error::param("softmax of an empty vector"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {z:?}")));
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    Ok(ProbDist(exps.into_iter().map(|e| e / s).collect()))
}

pub fn sharpen(p: &ProbDist, temperature: f64) -> Result<ProbDist> {
    sharpen_with(p, temperature, SharpenMode::Exp)
}

pub fn sharpen_with(p: &ProbDist, temperature: f64, mode: SharpenMode) -> Result<ProbDist> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    match mode {
        SharpenMode::Exp => {
            let scaled: Vec<f64> = p.probs().iter().map(|&q| q / temperature).collect();
            softmax_slice(&scaled)
        }
        SharpenMode::Power => {
            let powered: Vec<f64> = p.probs().iter().map(|&q| q.powf(1.0 / temperature)).collect();
            let s: f64 = powered.iter().sum();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Numeric(format!("power sharpening underflowed at T={temperature}")));
            }
            Ok(ProbDist(powered.into_iter().map(|v| v / s).collect()))
        }
    }
}

pub fn pseudo_label(p: &ProbDist) -> PseudoLabel {
    let class_index = p.argmax();
    PseudoLabel {
        class_index,
        confidence: p.probs()[class_index],
    }
}

/// `max(p) >= tau`.
pub fn confidence_mask(p: &ProbDist, tau: f64) -> bool {
    p.max() >= tau
}

#[inline]
fn floored_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

pub fn cross_entropy_hard(target: usize, p: &ProbDist) -> Result<f64> {
    let pt = p
        .probs()
        .get(target)
        .ok_or_else(|| Error::param(format!("target class {target} out of range for {} classes", p.len())))?;
    Ok(-floored_ln(*pt))
}

/// `-sum_i target_i * ln(max(p_i, eps))`. Both vectors must have equal length.
pub fn cross_entropy_soft(target: &ProbDist, p: &ProbDist) -> f64 {
    assert_eq!(target.len(), p.len(), "class count mismatch");
    -target
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(&t, &q)| if t == 0.0 { 0.0 } else { t * floored_ln(q) })
        .sum::<f64>()
}

/// Shannon entropy with the same log floor (and `0 ln 0 = 0`).
pub fn entropy(p: &ProbDist) -> f64 {
    -p.probs()
        .iter()
        .map(|&q| if q == 0.0 { 0.0 } else { q * floored_ln(q) })
        .sum::<f64>()
}

/// `D_KL(q || p)` with `q` the constant target.
pub fn kl_div(q: &ProbDist, p: &ProbDist) -> f64 {
    assert_eq!(q.len(), p.len(), "class count mismatch");
    q.probs()
        .iter()
        .zip(p.probs())
        .map(|(&a, &b)| {
            if a == 0.0 {
                0.0
            } else {
                a * (floored_ln(a) - floored_ln(b))
            }
        })
        .sum()
}

pub(crate) fn check_lengths(what: &str, lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::param(format!("{what}: mismatched batch lengths {lens:?}")));
    }
    Ok(())
}

fn batch_mean(n: usize, terms: impl Iterator<Item = f64>) -> f64 {
    if n == 0 {
        0.0
    } else {
        terms.sum::<f64>() / n as f64
    }
}

/// UDA: confidence-gated soft cross-entropy against the sharpened weak
/// prediction.
pub fn uda_unsup_loss(weak: &[ProbDist], strong: &[ProbDist], tau: f64, temperature: f64) -> Result<f64> {
    check_lengths("uda_unsup_loss", &[weak.len(), strong.len()])?;
    let mut terms = Vec::with_capacity(weak.len());
    for (w, s) in weak.iter().zip(strong) {
        terms.push(if confidence_mask(w, tau) {
            cross_entropy_soft(&sharpen(w, temperature)?, s)
        } else {
            0.0
        });
    }
    Ok(batch_mean(weak.len(), terms.into_iter()))
}

/// FixMatch: confidence-gated hard cross-entropy against the weak
/// pseudo-label.
pub fn fixmatch_unsup_loss(weak: &[ProbDist], strong: &[ProbDist], tau: f64) -> Result<f64> {
    check_lengths("fixmatch_unsup_loss", &[weak.len(), strong.len()])?;
    let mut terms = Vec::with_capacity(weak.len());
    for (w, s) in weak.iter().zip(strong) {
        terms.push(if confidence_mask(w, tau) {
            cross_entropy_hard(w.argmax(), s)?
        } else {
            0.0
        });
    }
    Ok(batch_mean(weak.len(), terms.into_iter()))
}

/// Two-branch unsupervised cross-entropy: hard pseudo-label for confident
/// weak predictions, sharpened soft target for the rest.
pub fn seqmatch_unsup_ce(weak: &[ProbDist], strong: &[ProbDist], tau: f64, temperature: f64) -> Result<f64> {
    seqmatch_unsup_ce_with(weak, strong, tau, temperature, SharpenMode::Exp)
}

pub fn seqmatch_unsup_ce_with(
    weak: &[ProbDist],
    strong: &[ProbDist],
    tau: f64,
    temperature: f64,
    mode: SharpenMode,
) -> Result<f64> {
    check_lengths("seqmatch_unsup_ce", &[weak.len(), strong.len()])?;
    let mut terms = Vec::with_capacity(weak.len());
    for (w, s) in weak.iter().zip(strong) {
        terms.push(if confidence_mask(w, tau) {
            cross_entropy_hard(w.argmax(), s)?
        } else {
            cross_entropy_soft(&sharpen_with(w, temperature, mode)?, s)
        });
    }
    Ok(batch_mean(weak.len(), terms.into_iter()))
}

/// Gated pairwise KL: `mean_b 1(max(gate_b) >= tau) KL(sharpen(src_b), dst_b)`.
pub fn seqmatch_kl_pair(
    src: &[ProbDist],
    dst: &[ProbDist],
    gate: &[ProbDist],
    tau: f64,
    temperature: f64,
) -> Result<f64> {
    kl_pair(src, dst, gate, tau, temperature, SharpenMode::Exp, Gate::Confident)
}

pub fn seqmatch_kl_pair_with(
    src: &[ProbDist],
    dst: &[ProbDist],
    gate: &[ProbDist],
    tau: f64,
    temperature: f64,
    mode: SharpenMode,
) -> Result<f64> {
    kl_pair(src, dst, gate, tau, temperature, mode, Gate::Confident)
}

/// Low-confidence ablation: KL from the sharpened weak prediction to the
/// strong prediction, counted only where the weak confidence is *below*
/// `tau`, averaged over the whole batch.
pub fn low_conf_kl_loss(weak: &[ProbDist], strong: &[ProbDist], tau: f64, temperature: f64) -> Result<f64> {
    kl_pair(weak, strong, weak, tau, temperature, SharpenMode::Exp, Gate::Unconfident)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Gate {
    Confident,
    Unconfident,
}

impl Gate {
    pub(crate) fn open(self, p: &ProbDist, tau: f64) -> bool {
        match self {
            Gate::Confident => confidence_mask(p, tau),
            Gate::Unconfident => !confidence_mask(p, tau),
        }
    }
}

pub(crate) fn kl_pair(
    src: &[ProbDist],
    dst: &[ProbDist],
    gate: &[ProbDist],
    tau: f64,
    temperature: f64,
    mode: SharpenMode,
    which: Gate,
) -> Result<f64> {
    check_lengths("kl pair", &[src.len(), dst.len(), gate.len()])?;
    let mut terms = Vec::with_capacity(src.len());
    for ((s, d), g) in src.iter().zip(dst).zip(gate) {
        terms.push(if which.open(g, tau) {
            kl_div(&sharpen_with(s, temperature, mode)?, d)
        } else {
            0.0
        });
    }
    Ok(batch_mean(src.len(), terms.into_iter()))
}

/// Mean hard cross-entropy over a labeled batch.
pub fn supervised_ce(targets: &[usize], probs: &[ProbDist]) -> Result<f64> {
    check_lengths("supervised_ce", &[targets.len(), probs.len()])?;
    let mut terms = Vec::with_capacity(targets.len());
    for (&t, p) in targets.iter().zip(probs) {
        terms.push(cross_entropy_hard(t, p)?);
    }
    Ok(batch_mean(targets.len(), terms.into_iter()))
}

/// Full SequenceMatch objective.
///
/// The weak stream gates the hard/soft cross-entropy and the weak-medium and
/// weak-strong KL terms; the medium stream gates (and sources) the
/// medium-strong term.
pub fn seqmatch_total_loss(
    labeled_targets: &[usize],
    labeled_probs: &[ProbDist],
    weak: &[ProbDist],
    medium: &[ProbDist],
    strong: &[ProbDist],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    check_lengths("seqmatch_total_loss labeled", &[labeled_targets.len(), labeled_probs.len()])?;
    check_lengths("seqmatch_total_loss unlabeled", &[weak.len(), medium.len(), strong.len()])?;
    let (tau, t, mode) = (cfg.tau, cfg.temperature, cfg.sharpen);
    let l_sup = supervised_ce(labeled_targets, labeled_probs)?;
    let l_u_ce = seqmatch_unsup_ce_with(weak, strong, tau, t, mode)?;
    let l_kl_wm = kl_pair(weak, medium, weak, tau, t, mode, Gate::Confident)?;
    let l_kl_ms = kl_pair(medium, strong, medium, tau, t, mode, Gate::Confident)?;
    let l_kl_ws = kl_pair(weak, strong, weak, tau, t, mode, Gate::Confident)?;
    Ok(assemble(l_sup, l_u_ce, l_kl_wm, l_kl_ms, l_kl_ws, cfg))
}

pub(crate) fn assemble(l_sup: f64, l_u_ce: f64, l_kl_wm: f64, l_kl_ms: f64, l_kl_ws: f64, cfg: &LossConfig) -> LossBreakdown {
    let w = cfg.kl_weights;
    let unsup = l_u_ce + w.weak_medium * l_kl_wm + w.medium_strong * l_kl_ms + w.weak_strong * l_kl_ws;
    LossBreakdown {
        l_sup,
        l_u_ce,
        l_kl_wm,
        l_kl_ms,
        l_kl_ws,
        total: l_sup + cfg.lambda_u * unsup,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pd(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Logits::new(vec![3.0; 5]).unwrap()).unwrap();
        assert!(u.probs().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let big = softmax(&Logits::new(vec![0.0, 50.0]).unwrap()).unwrap();
        assert!(big.probs()[1] > 1.0 - 1e-6);
        // e / (1 + e) = 0.7310585786300049
        let p = softmax(&Logits::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!((p.probs()[0] - 0.268_941_421_369_995_1).abs() < 1e-5);
        assert!((p.probs()[1] - 0.731_058_578_630_004_9).abs() < 1e-5);
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(Logits::new(vec![0.0, f64::NAN]), Err(Error::Numeric(_))));
        assert!(matches!(softmax_slice(&[f64::INFINITY, 0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn prob_dist_validation() {
        assert!(ProbDist::new(vec![0.5, 0.6]).is_err());
        assert!(ProbDist::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbDist::new(vec![0.5, 0.5 + 5e-7]).is_ok());
    }

    #[test]
    fn sharpen_examples() {
        let u = sharpen(&ProbDist::uniform(4), 0.3).unwrap();
        assert!(u.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        // softmax(1.2, 0.8): 1 / (1 + e^-0.4) = 0.598687660112452
        let s = sharpen(&pd(&[0.6, 0.4]), 0.5).unwrap();
        assert!((s.probs()[0] - 0.598_687_660_112_452).abs() < 1e-5);
        assert!((s.probs()[1] - 0.401_312_339_887_548).abs() < 1e-5);
        assert!(sharpen(&s, 0.0).is_err());
        assert!(sharpen(&s, -1.0).is_err());
    }

    #[test]
    fn power_sharpen_mode() {
        let s = sharpen_with(&pd(&[0.6, 0.4]), 0.5, SharpenMode::Power).unwrap();
        // 0.36 / (0.36 + 0.16)
        assert!((s.probs()[0] - 0.36 / 0.52).abs() < 1e-15);
    }

    #[test]
    fn pseudo_label_examples() {
        let one_hot = ProbDist::one_hot(4, 2);
        assert_eq!(
            pseudo_label(&one_hot),
            PseudoLabel {
                class_index: 2,
                confidence: 1.0
            }
        );
        assert_eq!(pseudo_label(&pd(&[0.5, 0.5])).class_index, 0);
        let p = pseudo_label(&pd(&[0.1, 0.7, 0.2]));
        assert_eq!((p.class_index, p.confidence), (1, 0.7));
    }

    #[test]
    fn confidence_mask_boundary() {
        assert!(confidence_mask(&pd(&[0.96, 0.04]), 0.95));
        assert!(!confidence_mask(&pd(&[0.94, 0.06]), 0.95));
        assert!(confidence_mask(&pd(&[0.75, 0.25]), 0.75));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy_hard(0, &ProbDist::one_hot(3, 0)).unwrap(), 0.0);
        let u = ProbDist::uniform(10);
        assert!((cross_entropy_hard(0, &u).unwrap() - 2.302_585_092_994_046).abs() < 1e-6);
        let clamped = cross_entropy_hard(1, &pd(&[1.0, 0.0])).unwrap();
        assert!(clamped.is_finite());
        assert!((clamped - (-LOG_FLOOR.ln())).abs() < 1e-12);
        assert!(cross_entropy_hard(10, &u).is_err());

        let u4 = ProbDist::uniform(4);
        assert!((cross_entropy_soft(&u4, &u4) - 4f64.ln()).abs() < 1e-6);
        let p = pd(&[0.2, 0.3, 0.5]);
        assert_eq!(
            cross_entropy_soft(&ProbDist::one_hot(3, 1), &p),
            cross_entropy_hard(1, &p).unwrap()
        );
    }

    #[test]
    fn kl_examples() {
        let p = pd(&[0.2, 0.3, 0.5]);
        assert!(kl_div(&p, &p).abs() < 1e-12);
        assert!((kl_div(&pd(&[1.0, 0.0]), &pd(&[0.5, 0.5])) - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn batch_losses_reject_mismatch() {
        let a = vec![ProbDist::uniform(2); 2];
        let b = vec![ProbDist::uniform(2); 3];
        assert!(uda_unsup_loss(&a, &b, 0.8, 0.4).is_err());
        assert!(fixmatch_unsup_loss(&a, &b, 0.95).is_err());
        assert!(seqmatch_unsup_ce(&a, &b, 0.95, 0.5).is_err());
        assert!(seqmatch_kl_pair(&a, &a, &b, 0.95, 0.5).is_err());
    }

    #[test]
    fn uda_examples() {
        let weak = vec![pd(&[0.6, 0.4]), pd(&[0.3, 0.7])];
        let strong = vec![pd(&[0.1, 0.9]), pd(&[0.5, 0.5])];
        assert_eq!(uda_unsup_loss(&weak, &strong, 0.8, 0.4).unwrap(), 0.0);

        let oh = ProbDist::one_hot(3, 1);
        let single = uda_unsup_loss(&[oh.clone()], &[oh.clone()], 0.8, 0.4).unwrap();
        let expected = cross_entropy_soft(&sharpen(&oh, 0.4).unwrap(), &oh);
        assert_eq!(single, expected);
    }

    #[test]
    fn fixmatch_examples() {
        // Two samples: the first masked out, the second confident with
        // strong probability 0.25 on its pseudo-label.
        let weak = vec![pd(&[0.5, 0.3, 0.2]), pd(&[0.97, 0.02, 0.01])];
        let strong = vec![pd(&[0.2, 0.5, 0.3]), pd(&[0.25, 0.5, 0.25])];
        let l = fixmatch_unsup_loss(&weak, &strong, 0.95).unwrap();
        assert!((l - 4f64.ln() / 2.0).abs() < 1e-12);
        assert!((l - 0.693_147).abs() < 1e-6);

        let confident = vec![ProbDist::one_hot(3, 0), ProbDist::one_hot(3, 2)];
        assert_eq!(fixmatch_unsup_loss(&confident, &confident, 0.95).unwrap(), 0.0);
        assert_eq!(fixmatch_unsup_loss(&[], &[], 0.95).unwrap(), 0.0);
    }

    #[test]
    fn seqmatch_ce_branches() {
        let confident = pd(&[0.96, 0.03, 0.01]);
        let unsure = pd(&[0.5, 0.3, 0.2]);
        let s1 = pd(&[0.6, 0.3, 0.1]);
        let s2 = pd(&[0.2, 0.2, 0.6]);
        let hard = -(0.6f64).ln();
        let q = sharpen(&unsure, 0.5).unwrap();
        let soft = -(q.probs()[0] * 0.2f64.ln() + q.probs()[1] * 0.2f64.ln() + q.probs()[2] * 0.6f64.ln());
        let got = seqmatch_unsup_ce(&[confident.clone(), unsure.clone()], &[s1.clone(), s2.clone()], 0.95, 0.5).unwrap();
        assert!((got - (hard + soft) / 2.0).abs() < 1e-12);

        let all_conf = [confident.clone(), confident.clone()];
        assert_eq!(
            seqmatch_unsup_ce(&all_conf, &[s1.clone(), s2.clone()], 0.95, 0.5).unwrap(),
            fixmatch_unsup_loss(&all_conf, &[s1, s2], 0.95).unwrap()
        );
    }

    #[test]
    fn kl_pair_examples() {
        let src = vec![pd(&[0.97, 0.03]), pd(&[0.1, 0.9])];
        let dst: Vec<ProbDist> = src.iter().map(|p| sharpen(p, 0.5).unwrap()).collect();
        let gate_all = vec![pd(&[0.99, 0.01]); 2];
        assert!(seqmatch_kl_pair(&src, &dst, &gate_all, 0.95, 0.5).unwrap().abs() < 1e-12);
        let gate_none = vec![pd(&[0.5, 0.5]); 2];
        assert_eq!(seqmatch_kl_pair(&src, &src, &gate_none, 0.95, 0.5).unwrap(), 0.0);

        // Single gated sample, hand evaluation.
        let s = pd(&[0.8, 0.2]);
        let d = pd(&[0.4, 0.6]);
        let e0 = (0.8f64 / 0.5).exp();
        let e1 = (0.2f64 / 0.5).exp();
        let (q0, q1) = (e0 / (e0 + e1), e1 / (e0 + e1));
        let expected = q0 * (q0 / 0.4).ln() + q1 * (q1 / 0.6).ln();
        let got = seqmatch_kl_pair(&[s.clone()], &[d], &[pd(&[0.96, 0.04])], 0.95, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn low_conf_matches_inverted_gate() {
        let weak = vec![pd(&[0.99, 0.01]), pd(&[0.6, 0.4])];
        let strong = vec![pd(&[0.3, 0.7]), pd(&[0.45, 0.55])];
        let got = low_conf_kl_loss(&weak, &strong, 0.95, 0.5).unwrap();
        let expected = kl_div(&sharpen(&weak[1], 0.5).unwrap(), &strong[1]) / 2.0;
        assert!((got - expected).abs() < 1e-15);
        let all_conf = vec![pd(&[0.99, 0.01]); 2];
        assert_eq!(low_conf_kl_loss(&all_conf, &strong, 0.95, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_edge_cases() {
        let cfg = LossConfig::default();
        let lab = vec![pd(&[0.7, 0.3])];
        let b = seqmatch_total_loss(&[0], &lab, &[], &[], &[], &cfg).unwrap();
        assert_eq!(b.total, b.l_sup);
        assert!((b.l_sup + 0.7f64.ln()).abs() < 1e-15);

        // Identical confident streams: the KL terms all equal
        // KL(sharpen(p), p), which is non-zero because exp-sharpening maps a
        // one-hot vector to softmax(1/T, 0).
        let u = vec![ProbDist::one_hot(2, 0); 2];
        let b = seqmatch_total_loss(&[0], &lab, &u, &u, &u, &cfg).unwrap();
        assert_eq!(b.l_u_ce, 0.0);
        assert!(b.l_kl_wm > 0.0);
        assert_eq!(b.l_kl_wm, b.l_kl_ms);
        assert_eq!(b.l_kl_wm, b.l_kl_ws);
        let expected = kl_div(&sharpen(&u[0], 0.5).unwrap(), &u[0]);
        assert_eq!(b.l_kl_wm, expected);

        assert!(seqmatch_total_loss(&[0, 1], &lab, &u, &u, &u, &cfg).is_err());
        assert!(seqmatch_total_loss(&[0], &lab, &u, &u[..1], &u, &cfg).is_err());
    }
}

//! Training step and loop for SequenceMatch and its baselines.

mod optim;

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::augment::{augment, AugmentConfig, AugmentPolicy, Image};
use crate::data::{Dataset, Split};
use crate::metrics::{calibration, classify_metrics, ssl_ratios, CalibrationReport, ClassifyReport, UtilizationRule};
use crate::model::{encode_checkpoint, Backbone, Batch, ForwardCache, Gradients, Mlp, ParamSet};
use crate::problib::grad::{
    fixmatch_unsup_loss_grad, low_conf_kl_loss_grad, seqmatch_total_loss_grad, supervised_ce_grad, uda_unsup_loss_grad,
    LogitGrads,
};
use crate::problib::{softmax_slice, KlWeights, LossBreakdown, LossConfig, ProbDist, SharpenMode};
use crate::rng::{Purpose, RngStream};
use crate::{Error, Result};

pub use optim::{cosine_lr, ema_update, sgd_momentum_step, sgd_momentum_step_decoupled};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    SequenceMatch,
    FixMatch,
    Uda,
    SupervisedOnly,
    /// Sharpened weak targets of low-confidence samples only, via KL.
    LowConfOnly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::SequenceMatch,
        Algorithm::FixMatch,
        Algorithm::Uda,
        Algorithm::SupervisedOnly,
        Algorithm::LowConfOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SequenceMatch => "sequencematch",
            Algorithm::FixMatch => "fixmatch",
            Algorithm::Uda => "uda",
            Algorithm::SupervisedOnly => "supervised",
            Algorithm::LowConfOnly => "lowconf",
        }
    }

    pub fn utilization_rule(self) -> UtilizationRule {
        match self {
            Algorithm::SequenceMatch => UtilizationRule::All,
            Algorithm::FixMatch | Algorithm::Uda => UtilizationRule::Confident,
            Algorithm::LowConfOnly => UtilizationRule::Unconfident,
            Algorithm::SupervisedOnly => UtilizationRule::Nothing,
        }
    }

    fn uses_unlabeled(self) -> bool {
        self != Algorithm::SupervisedOnly
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "sequencematch" | "seqmatch" => Ok(Algorithm::SequenceMatch),
            "fixmatch" => Ok(Algorithm::FixMatch),
            "uda" => Ok(Algorithm::Uda),
            "supervised" | "supervisedonly" => Ok(Algorithm::SupervisedOnly),
            "lowconf" | "lowconfonly" => Ok(Algorithm::LowConfOnly),
            _ => Err(Error::param(format!("unknown algorithm `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightDecayMode {
    /// Decay added to the gradient before the momentum buffer.
    #[default]
    Coupled,
    Decoupled,
}

impl FromStr for WeightDecayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "coupled" => Ok(Self::Coupled),
            "decoupled" => Ok(Self::Decoupled),
            _ => Err(Error::param(format!("unknown weight decay mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Labeled batch size `B`.
    pub batch_size: usize,
    /// Unlabeled-to-labeled batch ratio.
    pub mu: usize,
    pub tau: f64,
    pub temperature: f64,
    pub lambda_u: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecayMode,
    pub ema_momentum: f64,
    pub total_iters: usize,
    /// Evaluate and checkpoint every this many iterations; 0 means only at the end.
    pub eval_every: usize,
    /// Emit a metrics row every this many iterations (evaluations always log).
    pub log_every: usize,
    pub seed: u64,
    pub kl_weights: KlWeights,
    pub sharpen: SharpenMode,
    pub augment: AugmentConfig,
    pub ece_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_algorithm(Algorithm::SequenceMatch)
    }
}

impl TrainConfig {
    /// Defaults with the algorithm-specific threshold and temperature.
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        let (tau, temperature) = match algorithm {
            Algorithm::Uda => (0.8, 0.4),
            _ => (0.95, 0.5),
        };
        Self {
            algorithm,
            batch_size: 64,
            mu: 7,
            tau,
            temperature,
            lambda_u: 1.0,
            lr0: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            weight_decay_mode: WeightDecayMode::Coupled,
            ema_momentum: 0.999,
            total_iters: 2000,
            eval_every: 200,
            log_every: 1,
            seed: 0,
            kl_weights: KlWeights::default(),
            sharpen: SharpenMode::Exp,
            augment: AugmentConfig::default(),
            ece_bins: crate::metrics::DEFAULT_ECE_BINS,
        }
    }

    /// The lower threshold used for large, many-class datasets.
    pub fn large_preset(algorithm: Algorithm) -> Self {
        Self {
            tau: 0.7,
            ..Self::for_algorithm(algorithm)
        }
    }

    pub fn unlabeled_batch(&self) -> usize {
        self.mu * self.batch_size
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            temperature: self.temperature,
            lambda_u: self.lambda_u,
            kl_weights: self.kl_weights,
            sharpen: self.sharpen,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::param(msg));
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if self.algorithm.uses_unlabeled() && self.mu == 0 {
            return fail(format!("{} needs mu >= 1", self.algorithm));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return fail(format!("lambda_u must be >= 0, got {}", self.lambda_u));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return fail(format!("ema momentum must lie in [0, 1], got {}", self.ema_momentum));
        }
        if self.log_every == 0 {
            return fail("log_every must be positive".into());
        }
        if self.ece_bins == 0 {
            return fail("ece_bins must be positive".into());
        }
        if !(self.augment.cutout_fraction > 0.0 && self.augment.cutout_fraction <= 1.0) {
            return fail(format!("cutout fraction must lie in (0, 1], got {}", self.augment.cutout_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamSet,
    pub ema_params: ParamSet,
    pub velocity: Gradients,
    pub iter: usize,
    /// Root stream; per-sample streams are derived from its seed.
    pub rng: RngStream,
}

impl TrainState {
    /// Fresh state whose EMA copy equals the initial parameters.
    pub fn new(params: ParamSet, seed: u64) -> Self {
        Self {
            ema_params: params.clone(),
            velocity: Gradients::zeros(params.dims()),
            params,
            iter: 0,
            rng: RngStream::new(seed, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub losses: LossBreakdown,
    /// Fraction of the unlabeled batch whose weak confidence is below tau;
    /// `None` when the algorithm never looks at unlabeled data.
    pub mask_ratio: Option<f64>,
    pub utilization: f64,
    pub pseudo_label_accuracy: Option<f64>,
    pub lr: f64,
    /// Number of single-image augmentations performed in the step.
    pub augment_calls: usize,
}

impl StepMetrics {
    pub fn confident_fraction(&self) -> Option<f64> {
        self.mask_ratio.map(|m| 1.0 - m)
    }
}

/// A labeled batch: images and their classes.
#[derive(Debug, Clone, Copy)]
pub struct LabeledBatch<'a> {
    pub images: &'a [&'a Image],
    pub labels: &'a [usize],
}

/// An unlabeled batch; `truths` feed diagnostics only.
#[derive(Debug, Clone, Copy)]
pub struct UnlabeledBatch<'a> {
    pub images: &'a [&'a Image],
    pub truths: Option<&'a [usize]>,
}

#[derive(Clone, Copy)]
enum Stream {
    Labeled,
    Weak,
    Medium,
    Strong,
}

impl Stream {
    fn policy(self) -> AugmentPolicy {
        match self {
            Stream::Labeled | Stream::Weak => AugmentPolicy::weak(),
            Stream::Medium => AugmentPolicy::medium(),
            Stream::Strong => AugmentPolicy::strong(),
        }
    }

    fn rng(self, seed: u64, iter: usize, i: usize) -> RngStream {
        let (purpose, slot) = match self {
            Stream::Labeled => (Purpose::AugmentWeak, 0),
            Stream::Weak => (Purpose::AugmentWeak, 1),
            Stream::Medium => (Purpose::AugmentMedium, 2),
            Stream::Strong => (Purpose::AugmentStrong, 3),
        };
        RngStream::derive(seed, purpose, &[iter as u64, slot, i as u64])
    }
}

struct Evaluated {
    probs: Vec<ProbDist>,
    cache: ForwardCache,
}

fn run_stream(
    model: &Mlp,
    params: &ParamSet,
    images: &[&Image],
    stream: Stream,
    seed: u64,
    iter: usize,
    cfg: &AugmentConfig,
) -> Result<Evaluated> {
    let policy = stream.policy();
    let augmented = images
        .iter()
        .enumerate()
        .map(|(i, img)| augment(img, policy, &mut stream.rng(seed, iter, i), cfg))
        .collect::<Result<Vec<_>>>()?;
    let (logits, cache) = model.forward(params, &Batch::from_images(&augmented)?)?;
    let probs = logits.iter().map(|z| softmax_slice(z)).collect::<Result<Vec<_>>>()?;
    Ok(Evaluated { probs, cache })
}

fn scaled(grads: LogitGrads, k: f64) -> LogitGrads {
    grads.into_iter().map(|g| g.into_iter().map(|v| k * v).collect()).collect()
}

fn baseline_breakdown(l_sup: f64, l_u_ce: f64, l_kl_ws: f64, lambda_u: f64) -> LossBreakdown {
    LossBreakdown {
        l_sup,
        l_u_ce,
        l_kl_ws,
        total: l_sup + lambda_u * (l_u_ce + l_kl_ws),
        ..LossBreakdown::default()
    }
}

/// One optimization step.
///
/// Labeled images get the weak policy; unlabeled images get whichever of the
/// weak, medium and strong policies the algorithm needs, one forward pass per
/// stream on the live parameters. The weak stream only supplies targets and
/// gates. Gradients are accumulated in the fixed order labeled, medium,
/// strong, then SGD runs at `cosine_lr(state.iter)` and the EMA copy follows.
pub fn train_step(
    model: &Mlp,
    mut state: TrainState,
    labeled: LabeledBatch<'_>,
    unlabeled: UnlabeledBatch<'_>,
    cfg: &TrainConfig,
) -> Result<(TrainState, StepMetrics)> {
    let b = cfg.batch_size;
    if labeled.images.len() != b || labeled.labels.len() != b {
        return Err(Error::param(format!(
            "labeled batch has {} images and {} labels, expected {b}",
            labeled.images.len(),
            labeled.labels.len()
        )));
    }
    let alg = cfg.algorithm;
    let ub = cfg.unlabeled_batch();
    if alg.uses_unlabeled() && unlabeled.images.len() != ub {
        return Err(Error::param(format!(
            "unlabeled batch has {} images, expected {ub}",
            unlabeled.images.len()
        )));
    }
    let lr = cosine_lr(state.iter, cfg.total_iters, cfg.lr0)?;
    let seed = state.rng.seed();
    let iter = state.iter;
    let aug = &cfg.augment;
    let params = &state.params;

    let lab = run_stream(model, params, labeled.images, Stream::Labeled, seed, iter, aug)?;
    let mut augment_calls = b;
    let lam = cfg.lambda_u;

    let (losses, g_lab, unsup, ratios) = if alg.uses_unlabeled() {
        let weak = run_stream(model, params, unlabeled.images, Stream::Weak, seed, iter, aug)?;
        let strong = run_stream(model, params, unlabeled.images, Stream::Strong, seed, iter, aug)?;
        augment_calls += 2 * ub;
        let ratios = ssl_ratios(&weak.probs, cfg.tau, unlabeled.truths, alg.utilization_rule())?;
        match alg {
            Algorithm::SequenceMatch => {
                let medium = run_stream(model, params, unlabeled.images, Stream::Medium, seed, iter, aug)?;
                augment_calls += ub;
                let (losses, g) = seqmatch_total_loss_grad(
                    labeled.labels,
                    &lab.probs,
                    &weak.probs,
                    &medium.probs,
                    &strong.probs,
                    &cfg.loss_config(),
                )?;
                let unsup = vec![(medium.cache, g.medium), (strong.cache, g.strong)];
                (losses, g.labeled, unsup, Some(ratios))
            }
            _ => {
                let (l_sup, g_lab) = supervised_ce_grad(labeled.labels, &lab.probs)?;
                let (u, g_u) = match alg {
                    Algorithm::FixMatch => fixmatch_unsup_loss_grad(&weak.probs, &strong.probs, cfg.tau)?,
                    Algorithm::Uda => uda_unsup_loss_grad(&weak.probs, &strong.probs, cfg.tau, cfg.temperature)?,
                    _ => low_conf_kl_loss_grad(&weak.probs, &strong.probs, cfg.tau, cfg.temperature)?,
                };
                let losses = if alg == Algorithm::LowConfOnly {
                    baseline_breakdown(l_sup, 0.0, u, lam)
                } else {
                    baseline_breakdown(l_sup, u, 0.0, lam)
                };
                (losses, g_lab, vec![(strong.cache, scaled(g_u, lam))], Some(ratios))
            }
        }
    } else {
        let (l_sup, g_lab) = supervised_ce_grad(labeled.labels, &lab.probs)?;
        (baseline_breakdown(l_sup, 0.0, 0.0, lam), g_lab, Vec::new(), None)
    };

    let mut grads = model.backward(&lab.cache, &g_lab)?;
    // With lambda_u = 0 the unlabeled streams add nothing; skipping them
    // keeps the update bitwise equal to a supervised step.
    if lam != 0.0 {
        for (cache, g) in &unsup {
            grads.accumulate(&model.backward(cache, g)?)?;
        }
    }
    drop(unsup);

    match cfg.weight_decay_mode {
        WeightDecayMode::Coupled => {
            sgd_momentum_step(&mut state.params, &grads, &mut state.velocity, lr, cfg.momentum, cfg.weight_decay)
        }
        WeightDecayMode::Decoupled => sgd_momentum_step_decoupled(
            &mut state.params,
            &grads,
            &mut state.velocity,
            lr,
            cfg.momentum,
            cfg.weight_decay,
        ),
    }
    ema_update(&mut state.ema_params, &state.params, cfg.ema_momentum);
    state.iter += 1;

    for (name, v) in [
        ("l_sup", losses.l_sup),
        ("l_u_ce", losses.l_u_ce),
        ("l_kl_wm", losses.l_kl_wm),
        ("l_kl_ms", losses.l_kl_ms),
        ("l_kl_ws", losses.l_kl_ws),
        ("total", losses.total),
    ] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is {v} at iteration {iter}")));
        }
    }

    let metrics = StepMetrics {
        losses,
        mask_ratio: ratios.map(|r| r.mask_ratio),
        utilization: ratios.map_or(0.0, |r| r.utilization),
        pseudo_label_accuracy: ratios.and_then(|r| r.pseudo_label_accuracy),
        lr,
        augment_calls,
    };
    Ok((state, metrics))
}

/// Cycles through `0..n` in per-epoch shuffled order. A batch never spans two
/// epochs: when fewer than `size` indices remain, the tail is dropped and a
/// new epoch starts.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n: usize,
    seed: u64,
    purpose: Purpose,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(n: usize, seed: u64, purpose: Purpose) -> Self {
        let mut s = Self {
            n,
            seed,
            purpose,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        RngStream::derive(self.seed, self.purpose, &[self.epoch]).shuffle(&mut self.order);
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, size: usize) -> Result<Vec<usize>> {
        if size > self.n {
            return Err(Error::param(format!("batch of {size} requested from a pool of {}", self.n)));
        }
        if self.pos + size > self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let batch = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        Ok(batch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classify: ClassifyReport,
    pub calibration: CalibrationReport,
}

/// Classifies a dataset with the given parameters.
pub fn evaluate(model: &Mlp, params: &ParamSet, ds: &Dataset, bins: usize) -> Result<EvalReport> {
    let logits = model.logits(params, &Batch::from_images(ds.images())?)?;
    let probs = logits.iter().map(|z| softmax_slice(z)).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        classify: classify_metrics(ds.labels(), &probs)?,
        calibration: calibration(ds.labels(), &probs, bins)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub mask_ratio: Option<f64>,
    pub utilization: f64,
    pub pseudo_acc: Option<f64>,
    pub eval_error: Option<f64>,
    pub eval_ece: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "iter,lr,l_sup,l_u_ce,l_kl_wm,l_kl_ms,l_kl_ws,total,mask_ratio,utilization,pseudo_acc,eval_error,eval_ece";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metrics rows as CSV; absent values are empty fields.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let l = &r.losses;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.lr,
            l.l_sup,
            l.l_u_ce,
            l.l_kl_wm,
            l.l_kl_ms,
            l.l_kl_ws,
            l.total,
            opt(r.mask_ratio),
            r.utilization,
            opt(r.pseudo_acc),
            opt(r.eval_error),
            opt(r.eval_ece)
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub rows: Vec<MetricsRow>,
    pub step_metrics: Vec<StepMetrics>,
    /// `(iteration, encoded EMA checkpoint)` at every evaluation point.
    pub checkpoints: Vec<(usize, Vec<u8>)>,
    /// EMA evaluation after the last step, if a test set was given.
    pub final_eval: Option<EvalReport>,
}

impl TrainOutcome {
    pub fn eval_errors(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.eval_error).collect()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.final_eval.as_ref().map(|e| e.classify.error_rate)
    }

    pub fn best_error(&self) -> Option<f64> {
        self.eval_errors().into_iter().reduce(f64::min)
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, metrics_csv(&self.rows)).map_err(|e| Error::io(path, e))
    }

    /// Writes every checkpoint as `ckpt_<iter>.bin` into `dir`.
    pub fn write_checkpoints(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (iter, bytes) in &self.checkpoints {
            let path = dir.join(format!("ckpt_{iter}.bin"));
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Runs `cfg.total_iters` steps from `model.init()`.
///
/// The EMA parameters are evaluated on `test` (when non-empty) and
/// checkpointed every `eval_every` iterations and after the last step.
pub fn train_loop(model: &Mlp, cfg: &TrainConfig, split: &Split, test: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let state = TrainState::new(model.init(), cfg.seed);
    train_from(model, cfg, split, test, state)
}

/// [`train_loop`] from an explicit starting state.
pub fn train_from(
    model: &Mlp,
    cfg: &TrainConfig,
    split: &Split,
    test: Option<&Dataset>,
    mut state: TrainState,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let total = cfg.total_iters;
    let mut rows = Vec::new();
    let mut step_metrics = Vec::with_capacity(total);
    let mut checkpoints = Vec::new();
    let mut final_eval = None;
    if total == 0 {
        return Ok(TrainOutcome {
            state,
            rows,
            step_metrics,
            checkpoints,
            final_eval,
        });
    }

    let seed = cfg.seed;
    let ub = if cfg.algorithm.uses_unlabeled() { cfg.unlabeled_batch() } else { 0 };
    let mut lab_sampler = EpochSampler::new(split.labeled.len(), seed, Purpose::LabeledShuffle);
    let mut unl_sampler = EpochSampler::new(split.unlabeled.len(), seed, Purpose::UnlabeledShuffle);
    let test = test.filter(|t| !t.is_empty());

    while state.iter < total {
        let li = lab_sampler.next_batch(cfg.batch_size)?;
        let ui = if ub > 0 { unl_sampler.next_batch(ub)? } else { Vec::new() };
        let lab_images: Vec<&Image> = li.iter().map(|&i| &split.labeled.images()[i]).collect();
        let lab_labels: Vec<usize> = li.iter().map(|&i| split.labeled.labels()[i]).collect();
        let unl_images: Vec<&Image> = ui.iter().map(|&i| &split.unlabeled.images()[i]).collect();
        let unl_truths: Vec<usize> = ui.iter().map(|&i| split.unlabeled.labels()[i]).collect();

        let (next, m) = train_step(
            model,
            state,
            LabeledBatch {
                images: &lab_images,
                labels: &lab_labels,
            },
            UnlabeledBatch {
                images: &unl_images,
                truths: Some(&unl_truths),
            },
            cfg,
        )?;
        state = next;
        let k = state.iter;
        let is_eval = k == total || (cfg.eval_every > 0 && k % cfg.eval_every == 0);
        let mut row = MetricsRow {
            iter: k,
            lr: m.lr,
            losses: m.losses,
            mask_ratio: m.mask_ratio,
            utilization: m.utilization,
            pseudo_acc: m.pseudo_label_accuracy,
            eval_error: None,
            eval_ece: None,
        };
        if is_eval {
            if let Some(test) = test {
                let report = evaluate(model, &state.ema_params, test, cfg.ece_bins)?;
                row.eval_error = Some(report.classify.error_rate);
                row.eval_ece = Some(report.calibration.ece);
                if k == total {
                    final_eval = Some(report);
                }
            }
            checkpoints.push((k, encode_checkpoint(model.config(), &state.ema_params)?));
        }
        if is_eval || k % cfg.log_every == 0 {
            rows.push(row);
        }
        step_metrics.push(m);
    }
    Ok(TrainOutcome {
        state,
        rows,
        step_metrics,
        checkpoints,
        final_eval,
    })
}

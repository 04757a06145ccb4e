//! Training steps against hand-unrolled scalar traces.

use seqlab_core::augment::{augment, AugmentPolicy, Image};
use seqlab_core::data::{make_split, Dataset, SplitSpec};
use seqlab_core::model::{Backbone, Batch, Mlp, ModelConfig, ParamSet};
use seqlab_core::problib::SharpenMode;
use seqlab_core::rng::{Purpose, RngStream};
use seqlab_core::train::*;

/// Scalar model with one hidden ReLU unit: `z_k = v_k relu(w.x + c) + d_k`.
#[derive(Debug, Clone)]
struct Tiny {
    w: Vec<f64>,
    c: f64,
    v: Vec<f64>,
    d: Vec<f64>,
}

impl Tiny {
    fn from_params(p: &ParamSet) -> Self {
        let s = p.as_slice();
        let n = p.dims()[0];
        let k = p.dims()[2];
        Tiny {
            w: s[..n].to_vec(),
            c: s[n],
            v: s[n + 1..n + 1 + k].to_vec(),
            d: s[n + 1 + k..].to_vec(),
        }
    }

    fn flat(&self) -> Vec<f64> {
        [self.w.clone(), vec![self.c], self.v.clone(), self.d.clone()].concat()
    }

    fn hidden(&self, x: &[f64]) -> (f64, f64) {
        let pre: f64 = self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.c;
        (pre, pre.max(0.0))
    }

    fn probs(&self, x: &[f64]) -> Vec<f64> {
        let (_, h) = self.hidden(x);
        let z: Vec<f64> = self.v.iter().zip(&self.d).map(|(v, d)| v * h + d).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    /// Adds the parameter gradient of an input whose logit gradient is `dz`.
    fn accumulate(&self, x: &[f64], dz: &[f64], g: &mut Tiny) {
        let (pre, h) = self.hidden(x);
        let mut dh = 0.0;
        for k in 0..dz.len() {
            g.v[k] += dz[k] * h;
            g.d[k] += dz[k];
            dh += dz[k] * self.v[k];
        }
        if pre > 0.0 {
            for (gi, xi) in g.w.iter_mut().zip(x) {
                *gi += dh * xi;
            }
            g.c += dh;
        }
    }

    fn zeros_like(&self) -> Tiny {
        Tiny {
            w: vec![0.0; self.w.len()],
            c: 0.0,
            v: vec![0.0; self.v.len()],
            d: vec![0.0; self.d.len()],
        }
    }
}

fn input(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|&p| f64::from(p) / 255.0).collect()
}

fn sgd(theta: &[f64], g: &[f64], v: &[f64], lr: f64, m: f64, wd: f64) -> (Vec<f64>, Vec<f64>) {
    let v2: Vec<f64> = (0..theta.len()).map(|i| m * v[i] + g[i] + wd * theta[i]).collect();
    let t2 = (0..theta.len()).map(|i| theta[i] - lr * v2[i]).collect();
    (t2, v2)
}

fn assert_close(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() < 1e-12, "{what}[{i}]: {x} vs {y}");
    }
}

fn tiny_params(n: usize, classes: usize, seed: u64) -> ParamSet {
    let mut rng = RngStream::new(seed, 3);
    let mut p = Vec::new();
    p.extend((0..n).map(|_| rng.uniform_in(-0.2, 0.4)));
    p.push(0.2);
    p.extend((0..classes).map(|k| 1.5 * (k as f64 - 1.0) + rng.uniform_in(-0.5, 0.5)));
    p.extend((0..classes).map(|_| rng.uniform_in(-0.5, 0.5)));
    ParamSet::from_flat(&[n, 1, classes], p).unwrap()
}

#[test]
fn supervised_steps_match_hand_trace() {
    // 1x1 images: the weak policy's flip is the identity and its shift range
    // is zero, so the augmented inputs are the raw pixels.
    let model = Mlp::new(ModelConfig::new(1, vec![1], 2)).unwrap();
    let params = tiny_params(1, 2, 9);
    let imgs = [Image::new(1, 1, 1, vec![200]).unwrap(), Image::new(1, 1, 1, vec![40]).unwrap()];
    let refs: Vec<&Image> = imgs.iter().collect();
    let labels = [1usize, 0];
    let cfg = TrainConfig {
        batch_size: 2,
        total_iters: 10,
        ema_momentum: 0.9,
        ..TrainConfig::for_algorithm(Algorithm::SupervisedOnly)
    };

    let mut state = TrainState::new(params.clone(), 4);
    let mut theta = params.as_slice().to_vec();
    let mut vel = vec![0.0; theta.len()];
    let mut ema = theta.clone();
    for k in 0..2 {
        let tiny = Tiny::from_params(&ParamSet::from_flat(&[1, 1, 2], theta.clone()).unwrap());
        let mut g = tiny.zeros_like();
        for (img, &y) in imgs.iter().zip(&labels) {
            let x = input(img);
            let p = tiny.probs(&x);
            let dz: Vec<f64> = (0..2).map(|j| (p[j] - if j == y { 1.0 } else { 0.0 }) / 2.0).collect();
            tiny.accumulate(&x, &dz, &mut g);
        }
        let lr = cfg.lr0 * (7.0 * std::f64::consts::PI * k as f64 / (16.0 * 10.0)).cos();
        (theta, vel) = sgd(&theta, &g.flat(), &vel, lr, cfg.momentum, cfg.weight_decay);
        ema = ema.iter().zip(&theta).map(|(e, t)| 0.9 * e + 0.1 * t).collect();

        let (next, metrics) = train_step(
            &model,
            state,
            LabeledBatch { images: &refs, labels: &labels },
            UnlabeledBatch { images: &[], truths: None },
            &cfg,
        )
        .unwrap();
        state = next;
        assert!((metrics.lr - lr).abs() < 1e-15);
        assert_close(state.params.as_slice(), &theta, "params");
        assert_close(state.velocity.as_slice(), &vel, "velocity");
        assert_close(state.ema_params.as_slice(), &ema, "ema");
    }
}

fn sharpen(p: &[f64], t: f64, mode: SharpenMode) -> Vec<f64> {
    let raw: Vec<f64> = match mode {
        SharpenMode::Exp => p.iter().map(|v| (v / t).exp()).collect(),
        SharpenMode::Power => p.iter().map(|v| v.powf(1.0 / t)).collect(),
    };
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn max(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b })
}

#[test]
fn sequencematch_step_matches_hand_trace() {
    let side = 4;
    let n = side * side;
    let classes = 3;
    let mut rng = RngStream::new(21, 0);
    let mk = |rng: &mut RngStream| Image::new(side, side, 1, (0..n).map(|_| rng.below(256) as u8).collect()).unwrap();
    let lab_imgs: Vec<Image> = (0..2).map(|_| mk(&mut rng)).collect();
    let unl_imgs: Vec<Image> = (0..6).map(|_| mk(&mut rng)).collect();
    let labels = [2usize, 0];

    // Thresholds between observed weak confidences, so both branches run.
    let params = tiny_params(n, classes, 2);
    let tiny = Tiny::from_params(&params);
    let mut maxes: Vec<f64> = unl_imgs
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut r = RngStream::derive(13, Purpose::AugmentWeak, &[0, 1, i as u64]);
            max(&tiny.probs(&input(&augment(img, AugmentPolicy::weak(), &mut r, &Default::default()).unwrap())))
        })
        .collect();
    maxes.sort_by(f64::total_cmp);
    let (tau_lo, tau_hi) = ((maxes[1] + maxes[2]) / 2.0, (maxes[3] + maxes[4]) / 2.0);

    for (mode, tau) in [(SharpenMode::Exp, tau_lo), (SharpenMode::Power, tau_lo), (SharpenMode::Exp, tau_hi)] {
        let cfg = TrainConfig {
            batch_size: 2,
            mu: 3,
            tau,
            sharpen: mode,
            lambda_u: 0.7,
            kl_weights: seqlab_core::problib::KlWeights { weak_medium: 0.5, medium_strong: 1.5, weak_strong: 1.0 },
            total_iters: 5,
            seed: 13,
            ..TrainConfig::for_algorithm(Algorithm::SequenceMatch)
        };
        let view = |img: &Image, policy: AugmentPolicy, purpose: Purpose, slot: u64, i: usize| {
            let mut r = RngStream::derive(cfg.seed, purpose, &[0, slot, i as u64]);
            input(&augment(img, policy, &mut r, &cfg.augment).unwrap())
        };

        let mut g = tiny.zeros_like();
        for (i, (img, &y)) in lab_imgs.iter().zip(&labels).enumerate() {
            let x = view(img, AugmentPolicy::weak(), Purpose::AugmentWeak, 0, i);
            let p = tiny.probs(&x);
            let dz: Vec<f64> = (0..classes).map(|j| (p[j] - f64::from(u8::from(j == y))) / 2.0).collect();
            tiny.accumulate(&x, &dz, &mut g);
        }
        let ub = unl_imgs.len() as f64;
        let (lam, w) = (cfg.lambda_u, cfg.kl_weights);
        let (mut confident, mut unconfident) = (0, 0);
        for (i, img) in unl_imgs.iter().enumerate() {
            let pw = tiny.probs(&view(img, AugmentPolicy::weak(), Purpose::AugmentWeak, 1, i));
            let xm = view(img, AugmentPolicy::medium(), Purpose::AugmentMedium, 2, i);
            let xs = view(img, AugmentPolicy::strong(), Purpose::AugmentStrong, 3, i);
            let (pm, ps) = (tiny.probs(&xm), tiny.probs(&xs));
            let qw = sharpen(&pw, cfg.temperature, mode);
            let qm = sharpen(&pm, cfg.temperature, mode);
            let mut dm = vec![0.0; classes];
            let mut ds = vec![0.0; classes];
            if max(&pw) >= tau {
                confident += 1;
                let yh = argmax(&pw);
                for j in 0..classes {
                    ds[j] += ps[j] - f64::from(u8::from(j == yh));
                    dm[j] += w.weak_medium * (pm[j] - qw[j]);
                    ds[j] += w.weak_strong * (ps[j] - qw[j]);
                }
            } else {
                unconfident += 1;
                for j in 0..classes {
                    ds[j] += ps[j] - qw[j];
                }
            }
            if max(&pm) >= tau {
                for j in 0..classes {
                    ds[j] += w.medium_strong * (ps[j] - qm[j]);
                }
            }
            let scale = |v: Vec<f64>| v.into_iter().map(|x| lam * x / ub).collect::<Vec<f64>>();
            tiny.accumulate(&xm, &scale(dm), &mut g);
            tiny.accumulate(&xs, &scale(ds), &mut g);
        }
        assert!(confident > 0 && unconfident > 0, "trace should exercise both branches (tau {tau})");

        let theta = params.as_slice().to_vec();
        let (theta2, vel2) = sgd(&theta, &g.flat(), &vec![0.0; theta.len()], cfg.lr0, cfg.momentum, cfg.weight_decay);
        let ema2: Vec<f64> = theta.iter().zip(&theta2).map(|(e, t)| cfg.ema_momentum * e + (1.0 - cfg.ema_momentum) * t).collect();

        let model = Mlp::new(ModelConfig::new(n, vec![1], classes)).unwrap();
        let lab_refs: Vec<&Image> = lab_imgs.iter().collect();
        let unl_refs: Vec<&Image> = unl_imgs.iter().collect();
        let (state, m) = train_step(
            &model,
            TrainState::new(params.clone(), cfg.seed),
            LabeledBatch { images: &lab_refs, labels: &labels },
            UnlabeledBatch { images: &unl_refs, truths: None },
            &cfg,
        )
        .unwrap();
        assert_close(state.params.as_slice(), &theta2, "params");
        assert_close(state.velocity.as_slice(), &vel2, "velocity");
        assert_close(state.ema_params.as_slice(), &ema2, "ema");
        assert_eq!(m.utilization, 1.0);
        assert!((m.mask_ratio.unwrap() - unconfident as f64 / ub).abs() < 1e-15);
    }
}

fn toy_images(count: usize, seed: u64) -> Vec<Image> {
    let mut rng = RngStream::new(seed, 1);
    (0..count)
        .map(|_| Image::new(8, 8, 1, (0..64).map(|_| rng.below(256) as u8).collect()).unwrap())
        .collect()
}

#[test]
fn zero_unsupervised_weight_gives_a_supervised_update() {
    let model = Mlp::new(ModelConfig::new(64, vec![6], 3)).unwrap();
    let lab = toy_images(4, 1);
    let unl = toy_images(8, 2);
    let labels = [0usize, 1, 2, 1];
    let lab_refs: Vec<&Image> = lab.iter().collect();
    let unl_refs: Vec<&Image> = unl.iter().collect();
    let base = TrainConfig {
        batch_size: 4,
        mu: 2,
        lambda_u: 0.0,
        total_iters: 3,
        ..TrainConfig::for_algorithm(Algorithm::SupervisedOnly)
    };
    let run = |alg: Algorithm| {
        let cfg = TrainConfig { algorithm: alg, ..base.clone() };
        let mut state = TrainState::new(model.init(), 7);
        for _ in 0..3 {
            state = train_step(
                &model,
                state,
                LabeledBatch { images: &lab_refs, labels: &labels },
                UnlabeledBatch { images: &unl_refs, truths: None },
                &cfg,
            )
            .unwrap()
            .0;
        }
        state
    };
    let sup = run(Algorithm::SupervisedOnly);
    for alg in [Algorithm::SequenceMatch, Algorithm::FixMatch, Algorithm::Uda, Algorithm::LowConfOnly] {
        let s = run(alg);
        assert_eq!(s.params, sup.params, "{alg}");
        assert_eq!(s.velocity, sup.velocity, "{alg}");
        assert_eq!(s.ema_params, sup.ema_params, "{alg}");
    }
}

#[test]
fn supervised_toy_reaches_zero_training_error() {
    // Two classes, bright top half vs bright bottom half: linearly separable
    // and unchanged by the weak policy's horizontal flips.
    let mut rng = RngStream::new(3, 0);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let class = i % 2;
        let pixels = (0..64)
            .map(|p| {
                let top = p < 32;
                let base: f64 = if top == (class == 0) { 200.0 } else { 50.0 };
                (base + 20.0 * rng.normal()).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        images.push(Image::new(8, 8, 1, pixels).unwrap());
        labels.push(class);
    }
    let ds = Dataset::new("toy", images, labels, 2).unwrap();
    let split = make_split(&ds, &SplitSpec { n_labels: 40, balanced: true, seed: 0, include_labeled_in_unlabeled: true }).unwrap();
    let model = Mlp::new(ModelConfig::new(64, vec![8], 2)).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        total_iters: 500,
        eval_every: 500,
        ..TrainConfig::for_algorithm(Algorithm::SupervisedOnly)
    };
    let out = train_loop(&model, &cfg, &split, None).unwrap();
    let logits = model.logits(&out.state.params, &Batch::from_images(split.labeled.images()).unwrap()).unwrap();
    let errors = logits
        .iter()
        .zip(split.labeled.labels())
        .filter(|(z, &y)| argmax(z) != y)
        .count();
    assert_eq!(errors, 0);
}

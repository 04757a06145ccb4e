//! SGD with momentum, the cosine schedule and the EMA teacher.

use std::f64::consts::PI;

use crate::model::{Gradients, ParamSet};
use crate::{Error, Result};

/// `lr0 * cos(7 pi k / (16 K))` for `0 <= k < K`.
pub fn cosine_lr(k: usize, total: usize, lr0: f64) -> Result<f64> {
    if k >= total {
        return Err(Error::param(format!("iteration {k} outside schedule of {total}")));
    }
    Ok(lr0 * (7.0 * PI * k as f64 / (16.0 * total as f64)).cos())
}

fn assert_congruent(params: &ParamSet, grads: &Gradients, velocity: &Gradients) {
    assert!(
        params.dims() == grads.dims() && params.dims() == velocity.dims(),
        "optimizer buffers disagree in shape"
    );
}

/// `g = grad + wd * theta; v = m * v + g; theta -= lr * v`.
///
/// # Panics
/// If the three buffers are not shape-congruent.
pub fn sgd_momentum_step(
    params: &mut ParamSet,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    assert_congruent(params, grads, velocity);
    let theta = params.as_mut_slice();
    let v = velocity.as_mut_slice();
    for ((w, &g), v) in theta.iter_mut().zip(grads.as_slice()).zip(v) {
        let g = g + weight_decay * *w;
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
}

/// Like [`sgd_momentum_step`] but the decay bypasses the momentum buffer:
/// `v = m * v + grad; theta -= lr * (v + wd * theta)`.
///
/// # Panics
/// If the three buffers are not shape-congruent.
pub fn sgd_momentum_step_decoupled(
    params: &mut ParamSet,
    grads: &Gradients,
    velocity: &mut Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    assert_congruent(params, grads, velocity);
    let theta = params.as_mut_slice();
    let v = velocity.as_mut_slice();
    for ((w, &g), v) in theta.iter_mut().zip(grads.as_slice()).zip(v) {
        *v = momentum * *v + g;
        *w -= lr * (*v + weight_decay * *w);
    }
}

/// `ema = m * ema + (1 - m) * params`.
///
/// # Panics
/// If the buffers differ in shape.
pub fn ema_update(ema: &mut ParamSet, params: &ParamSet, m: f64) {
    assert!(ema.dims() == params.dims(), "ema and live parameters disagree in shape");
    for (e, &p) in ema.as_mut_slice().iter_mut().zip(params.as_slice()) {
        *e = m * *e + (1.0 - m) * p;
    }
}

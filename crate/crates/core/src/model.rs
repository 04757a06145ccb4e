//! Small feed-forward classifier: flatten, ReLU hidden layers, linear head.
//!
//! Parameters live in one flat `f64` buffer. Layer `l` stores its weight
//! matrix (`out x in`, row-major) followed by its bias vector; layers follow
//! each other from input to output. That ordering is also the checkpoint
//! ordering.

use std::path::Path;
use std::sync::Arc;

use crate::augment::Image;
use crate::rng::{Purpose, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub init_seed: u64,
    /// Weights are drawn from `U(-a, a)` with `a = init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
}

/// He-uniform scale for ReLU layers.
pub const DEFAULT_INIT_SCALE: f64 = 2.449_489_742_783_178; // sqrt(6)

impl ModelConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            num_classes,
            init_seed: 0,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::param(format!("all model dimensions must be >= 1: {self:?}")));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::param(format!("init_scale must be finite and >= 0, got {}", self.init_scale)));
        }
        Ok(())
    }

    /// `[input, hidden..., classes]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.layer_dims())
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Offsets of `(weights, bias)` for each layer in the flat buffer.
fn layer_offsets(dims: &[usize]) -> Vec<(usize, usize)> {
    let mut off = 0;
    dims.windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = off;
            let bias = off + fan_in * fan_out;
            off = bias + fan_out;
            (weights, bias)
        })
        .collect()
}

macro_rules! flat_params {
    ($name:ident) => {
        impl $name {
            pub fn zeros(dims: &[usize]) -> Self {
                Self {
                    dims: dims.to_vec(),
                    values: vec![0.0; param_count(dims)],
                }
            }

            pub fn from_flat(dims: &[usize], values: Vec<f64>) -> Result<Self> {
                let expected = param_count(dims);
                if values.len() != expected {
                    return Err(Error::param(format!(
                        "flat buffer of {} values for a layout of {expected}",
                        values.len()
                    )));
                }
                Ok(Self {
                    dims: dims.to_vec(),
                    values,
                })
            }

            pub fn dims(&self) -> &[usize] {
                &self.dims
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.values
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn num_layers(&self) -> usize {
                self.dims.len() - 1
            }

            /// `(weights, bias)` of layer `l`; weights are `out x in` row-major.
            pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
                let (w, b) = layer_offsets(&self.dims)[l];
                let out = self.dims[l + 1];
                (&self.values[w..b], &self.values[b..b + out])
            }

            pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
                let (w, b) = layer_offsets(&self.dims)[l];
                let out = self.dims[l + 1];
                let (head, tail) = self.values[w..b + out].split_at_mut(b - w);
                (head, tail)
            }

            pub fn congruent<T: AsRef<[usize]>>(&self, dims: T) -> bool {
                self.dims == dims.as_ref()
            }
        }
    };
}

/// Model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    dims: Vec<usize>,
    values: Vec<f64>,
}

/// Gradient (or optimizer velocity) with the same layout as a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    dims: Vec<usize>,
    values: Vec<f64>,
}

flat_params!(ParamSet);
flat_params!(Gradients);

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self::zeros(params.dims())
    }

    /// `self += other`, elementwise in index order.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::param("accumulating gradients of different layouts"));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
        Ok(())
    }
}

/// Dense row-major batch of model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::param("ragged batch rows"));
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    /// Images scaled to `[0, 1]`; all images must share a shape.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        if let Some(first) = images.first() {
            if images.iter().any(|im| !im.same_shape(first)) {
                return Err(Error::param("batch images differ in shape"));
            }
        }
        let dim = images.first().map_or(0, |im| im.pixels().len());
        let mut data = Vec::with_capacity(images.len() * dim);
        for im in images {
            data.extend(im.pixels().iter().map(|&p| f64::from(p) / 255.0));
        }
        Ok(Self {
            rows: images.len(),
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Activations retained by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    params: Arc<ParamSet>,
    /// Input of each layer, `rows x dims[l]`.
    inputs: Vec<Vec<f64>>,
    rows: usize,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// A classifier whose parameters live in a [`ParamSet`].
pub trait Backbone {
    fn num_classes(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn layer_dims(&self) -> Vec<usize>;

    fn init(&self) -> ParamSet;

    /// Logits per sample plus the cache needed by [`Backbone::backward`].
    fn forward(&self, params: &ParamSet, batch: &Batch) -> Result<(Vec<Vec<f64>>, ForwardCache)>;

    fn backward(&self, cache: &ForwardCache, dlogits: &[Vec<f64>]) -> Result<Gradients>;

    fn logits(&self, params: &ParamSet, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        self.forward(params, batch).map(|(l, _)| l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: ModelConfig,
}

impl Mlp {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
}

impl Backbone for Mlp {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn layer_dims(&self) -> Vec<usize> {
        self.config.layer_dims()
    }

    fn init(&self) -> ParamSet {
        init(&self.config)
    }

    fn forward(&self, params: &ParamSet, batch: &Batch) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
        let dims = self.config.layer_dims();
        if !params.congruent(&dims) {
            return Err(Error::param(format!(
                "parameter layout {:?} does not match model {:?}",
                params.dims(),
                dims
            )));
        }
        if batch.rows() > 0 && batch.dim() != self.config.input_dim {
            return Err(Error::param(format!(
                "input dimension {} does not match model input {}",
                batch.dim(),
                self.config.input_dim
            )));
        }
        let n = batch.rows();
        let layers = params.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut current = batch.data.clone();
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let (w, b) = params.layer(l);
            let mut out = vec![0.0; n * fan_out];
            for r in 0..n {
                let x = &current[r * fan_in..(r + 1) * fan_in];
                let row = &mut out[r * fan_out..(r + 1) * fan_out];
                for (o, slot) in row.iter_mut().enumerate() {
                    let wo = &w[o * fan_in..(o + 1) * fan_in];
                    let mut acc = b[o];
                    for (a, c) in wo.iter().zip(x) {
                        acc += a * c;
                    }
                    *slot = acc;
                }
            }
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut current, out));
        }
        let classes = self.config.num_classes;
        let logits = current.chunks(classes).map(<[f64]>::to_vec).collect();
        Ok((
            logits,
            ForwardCache {
                params: Arc::new(params.clone()),
                inputs,
                rows: n,
            },
        ))
    }

    fn backward(&self, cache: &ForwardCache, dlogits: &[Vec<f64>]) -> Result<Gradients> {
        let dims = self.config.layer_dims();
        let params = &cache.params;
        if !params.congruent(&dims) || cache.inputs.len() != dims.len() - 1 {
            return Err(Error::param("forward cache was produced by a different model"));
        }
        if dlogits.len() != cache.rows || dlogits.iter().any(|g| g.len() != self.config.num_classes) {
            return Err(Error::param(format!(
                "dlogits shape does not match the cached batch of {} rows x {} classes",
                cache.rows, self.config.num_classes
            )));
        }
        let n = cache.rows;
        let mut grads = Gradients::zeros(&dims);
        let mut delta: Vec<f64> = dlogits.concat();
        for l in (0..dims.len() - 1).rev() {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let input = &cache.inputs[l];
            {
                let (gw, gb) = grads.layer_mut(l);
                for r in 0..n {
                    let d = &delta[r * fan_out..(r + 1) * fan_out];
                    let x = &input[r * fan_in..(r + 1) * fan_in];
                    for (o, &dv) in d.iter().enumerate() {
                        gb[o] += dv;
                        if dv != 0.0 {
                            for (g, xv) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                                *g += dv * xv;
                            }
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = params.layer(l);
            let mut prev = vec![0.0; n * fan_in];
            for r in 0..n {
                let d = &delta[r * fan_out..(r + 1) * fan_out];
                let p = &mut prev[r * fan_in..(r + 1) * fan_in];
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        for (pv, wv) in p.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                            *pv += dv * wv;
                        }
                    }
                }
                // ReLU gate: the cached input of layer l is relu(pre-activation).
                for (pv, &a) in p.iter_mut().zip(&input[r * fan_in..(r + 1) * fan_in]) {
                    if a <= 0.0 {
                        *pv = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(grads)
    }
}

pub fn init(config: &ModelConfig) -> ParamSet {
    let dims = config.layer_dims();
    let mut params = ParamSet::zeros(&dims);
    let mut rng = RngStream::derive(config.init_seed, Purpose::Init, &[]);
    for l in 0..dims.len() - 1 {
        let bound = config.init_scale / (dims[l] as f64).sqrt();
        let (w, _) = params.layer_mut(l);
        for v in w.iter_mut() {
            *v = rng.uniform_in(-bound, bound);
        }
    }
    params
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SEQLABCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (all integers little-endian):
/// magic `SEQLABCK`, `u32` version, `u64` input_dim, `u64` hidden layer
/// count, one `u64` per hidden width, `u64` classes, `u64` init_seed, `f64`
/// init_scale, `u64` parameter count, then the parameters as `f64`.
pub fn encode_checkpoint(config: &ModelConfig, params: &ParamSet) -> Result<Vec<u8>> {
    if !params.congruent(config.layer_dims()) {
        return Err(Error::param("checkpoint parameters do not match the config"));
    }
    let mut out = Vec::with_capacity(64 + params.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.input_dim as u64).to_le_bytes());
    out.extend_from_slice(&(config.hidden_dims.len() as u64).to_le_bytes());
    for &h in &config.hidden_dims {
        out.extend_from_slice(&(h as u64).to_le_bytes());
    }
    out.extend_from_slice(&(config.num_classes as u64).to_le_bytes());
    out.extend_from_slice(&config.init_seed.to_le_bytes());
    out.extend_from_slice(&config.init_scale.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ParamSet)> {
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut u64_at = || -> Result<u64> { Ok(u64::from_le_bytes(take(8)?.try_into().unwrap())) };
    let input_dim = u64_at()? as usize;
    let n_hidden = u64_at()? as usize;
    if n_hidden > 1024 {
        return Err(Error::Format(format!("implausible hidden layer count {n_hidden}")));
    }
    let hidden_dims = (0..n_hidden).map(|_| u64_at().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let num_classes = u64_at()? as usize;
    let init_seed = u64_at()?;
    let init_scale = f64::from_bits(u64_at()?);
    let count = u64_at()? as usize;
    let config = ModelConfig {
        input_dim,
        hidden_dims,
        num_classes,
        init_seed,
        init_scale,
    };
    config.validate().map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    if count != config.param_count() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameters, config implies {}",
            config.param_count()
        )));
    }
    let values = (0..count)
        .map(|_| u64_at().map(f64::from_bits))
        .collect::<Result<Vec<_>>>()?;
    if !cur.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", cur.len())));
    }
    let params = ParamSet::from_flat(&config.layer_dims(), values)?;
    Ok((config, params))
}

pub fn write_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(config, params)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ParamSet)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

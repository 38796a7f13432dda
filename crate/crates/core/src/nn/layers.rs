//! Layers with explicit forward caches and exact backward passes.
//!
//! Activations are row-major `[batch, channels, length]` unless noted.
//! `backward` consumes the cache of the latest `forward`, accumulates
//! parameter gradients and returns the input gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gemm::gemm;
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; dropout can be disabled for gradient checks.
    Train { dropout: bool },
    Eval,
}

pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: &'a mut ChaCha8Rng,
}

/// Mutable view of one piece of persistent layer state.
pub enum StateRef<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Vec<f64>),
    Flag(&'a mut bool),
}

pub trait Layer {
    fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor>;
    fn backward(&mut self, dy: &Tensor) -> Result<Tensor>;
    /// Visits parameters and buffers in a fixed order.
    fn visit_state(&mut self, _f: &mut dyn FnMut(StateRef)) {}
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

fn no_cache(layer: &str) -> Error {
    Error::invalid(format!("{layer}: backward called without a forward pass"))
}

fn check_grad_shape(dy: &Tensor, want: &[usize], layer: &str) -> Result<()> {
    if dy.shape() != want {
        return Err(Error::shape(format!(
            "{layer}: gradient shape {:?}, forward output was {want:?}",
            dy.shape()
        )));
    }
    Ok(())
}

/// Same-length 1-d convolution with zero padding `k / 2` on each side.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    c_in: usize,
    c_out: usize,
    k: usize,
    cache: Option<ConvCache>,
}

#[derive(Debug, Clone)]
struct ConvCache {
    batch: usize,
    len: usize,
    cols: Vec<f64>,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        if c_in == 0 || c_out == 0 || k % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv1d needs channels >= 1 and an odd kernel, got {c_in}->{c_out}, k={k}"
            )));
        }
        Ok(Conv1d {
            weight: Param::new(Tensor::zeros(&[c_out, c_in, k])),
            bias: Param::new(Tensor::zeros(&[c_out])),
            c_in,
            c_out,
            k,
            cache: None,
        })
    }

    /// He-uniform weights, zero bias.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / (self.c_in * self.k) as f64).sqrt();
        for w in self.weight.value.data_mut() {
            *w = rng.random_range(-bound..bound);
        }
        self.bias.value.data_mut().iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn out_channels(&self) -> usize {
        self.c_out
    }
}

impl Layer for Conv1d {
    fn forward(&mut self, x: &Tensor, _ctx: &mut ForwardCtx) -> Result<Tensor> {
        let [batch, c_in, len] = x.dims::<3>("conv1d")?;
        if c_in != self.c_in {
            return Err(Error::shape(format!(
                "conv1d expects {} input channels, got {c_in}",
                self.c_in
            )));
        }
        let (k, pad, bl) = (self.k, self.k / 2, batch * len);
        let xd = x.data();
        // cols[(c·k + j), (b·L + t)] = x[b, c, t + j - pad]
        let mut cols = vec![0.0; c_in * k * bl];
        for c in 0..c_in {
            for j in 0..k {
                let row = &mut cols[(c * k + j) * bl..(c * k + j + 1) * bl];
                for b in 0..batch {
                    let src = &xd[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                    let dst = &mut row[b * len..(b + 1) * len];
                    for t in 0..len {
                        let s = t as isize + j as isize - pad as isize;
                        if s >= 0 && (s as usize) < len {
                            dst[t] = src[s as usize];
                        }
                    }
                }
            }
        }
        let mut yt = vec![0.0; self.c_out * bl];
        gemm(self.c_out, c_in * k, bl, self.weight.value.data(), false, &cols, false, 0.0, &mut yt);
        let mut y = Tensor::zeros(&[batch, self.c_out, len]);
        let yd = y.data_mut();
        let bias = self.bias.value.data();
        for o in 0..self.c_out {
            for b in 0..batch {
                let src = &yt[o * bl + b * len..o * bl + (b + 1) * len];
                let dst = &mut yd[(b * self.c_out + o) * len..(b * self.c_out + o + 1) * len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[o];
                }
            }
        }
        self.cache = Some(ConvCache { batch, len, cols });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("conv1d"))?;
        let (batch, len) = (cache.batch, cache.len);
        check_grad_shape(dy, &[batch, self.c_out, len], "conv1d")?;
        let (k, pad, bl, c_in) = (self.k, self.k / 2, batch * len, self.c_in);
        let dyd = dy.data();
        let mut dyt = vec![0.0; self.c_out * bl];
        for o in 0..self.c_out {
            for b in 0..batch {
                dyt[o * bl + b * len..o * bl + (b + 1) * len]
                    .copy_from_slice(&dyd[(b * self.c_out + o) * len..(b * self.c_out + o + 1) * len]);
            }
            self.bias.grad[o] += dyt[o * bl..(o + 1) * bl].iter().sum::<f64>();
        }
        gemm(self.c_out, bl, c_in * k, &dyt, false, &cache.cols, true, 1.0, &mut self.weight.grad);
        let mut dcols = vec![0.0; c_in * k * bl];
        gemm(c_in * k, self.c_out, bl, self.weight.value.data(), true, &dyt, false, 0.0, &mut dcols);
        let mut dx = Tensor::zeros(&[batch, c_in, len]);
        let dxd = dx.data_mut();
        for c in 0..c_in {
            for j in 0..k {
                let row = &dcols[(c * k + j) * bl..(c * k + j + 1) * bl];
                for b in 0..batch {
                    let dst = &mut dxd[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                    for t in 0..len {
                        let s = t as isize + j as isize - pad as isize;
                        if s >= 0 && (s as usize) < len {
                            dst[s as usize] += row[b * len + t];
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(StateRef)) {
        f(StateRef::Param(&mut self.weight));
        f(StateRef::Param(&mut self.bias));
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over (batch, length).
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Set once running statistics have been updated at least once.
    pub tracked: bool,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    shape: [usize; 3],
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new(Tensor::new(vec![channels], vec![1.0; channels]).expect("shape")),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            tracked: false,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

impl Layer for BatchNorm1d {
    fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let [batch, ch, len] = x.dims::<3>("batchnorm1d")?;
        if ch != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm1d has {} channels, input has {ch}",
                self.channels()
            )));
        }
        let xd = x.data();
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        let mut y = Tensor::zeros(&[batch, ch, len]);
        let idx = |b: usize, c: usize| (b * ch + c) * len;
        match ctx.mode {
            Mode::Eval => {
                if !self.tracked {
                    return Err(Error::invalid(
                        "batchnorm1d in eval mode before any running-statistics update",
                    ));
                }
                let yd = y.data_mut();
                for c in 0..ch {
                    let inv = 1.0 / (self.running_var[c] + BN_EPS).sqrt();
                    for b in 0..batch {
                        for t in 0..len {
                            let i = idx(b, c) + t;
                            yd[i] = gamma[c] * (xd[i] - self.running_mean[c]) * inv + beta[c];
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train { .. } => {
                let n = batch * len;
                if n < 2 {
                    return Err(Error::invalid(
                        "batchnorm1d in train mode needs batch * length > 1 per channel",
                    ));
                }
                let mut xhat = vec![0.0; xd.len()];
                let mut inv_std = vec![0.0; ch];
                let yd = y.data_mut();
                for c in 0..ch {
                    let mut mean = 0.0;
                    for b in 0..batch {
                        mean += xd[idx(b, c)..idx(b, c) + len].iter().sum::<f64>();
                    }
                    mean /= n as f64;
                    let mut var = 0.0;
                    for b in 0..batch {
                        var += xd[idx(b, c)..idx(b, c) + len]
                            .iter()
                            .map(|v| (v - mean).powi(2))
                            .sum::<f64>();
                    }
                    var /= n as f64;
                    let inv = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[c] = inv;
                    for b in 0..batch {
                        for t in 0..len {
                            let i = idx(b, c) + t;
                            xhat[i] = (xd[i] - mean) * inv;
                            yd[i] = gamma[c] * xhat[i] + beta[c];
                        }
                    }
                    let unbiased = var * n as f64 / (n - 1) as f64;
                    self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean;
                    self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * unbiased;
                }
                self.tracked = true;
                self.cache = Some(BnCache {
                    shape: [batch, ch, len],
                    xhat,
                    inv_std,
                });
            }
        }
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache("batchnorm1d (train mode)"))?;
        let [batch, ch, len] = cache.shape;
        check_grad_shape(dy, &cache.shape, "batchnorm1d")?;
        let n = (batch * len) as f64;
        let dyd = dy.data();
        let gamma = self.gamma.value.data();
        let mut dx = Tensor::zeros(&cache.shape);
        let dxd = dx.data_mut();
        for c in 0..ch {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for b in 0..batch {
                let base = (b * ch + c) * len;
                for i in base..base + len {
                    sum_dy += dyd[i];
                    sum_dy_xhat += dyd[i] * cache.xhat[i];
                }
            }
            self.beta.grad[c] += sum_dy;
            self.gamma.grad[c] += sum_dy_xhat;
            let scale = gamma[c] * cache.inv_std[c] / n;
            for b in 0..batch {
                let base = (b * ch + c) * len;
                for i in base..base + len {
                    dxd[i] = scale * (n * dyd[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                }
            }
        }
        Ok(dx)
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(StateRef)) {
        f(StateRef::Param(&mut self.gamma));
        f(StateRef::Param(&mut self.beta));
        f(StateRef::Buffer(&mut self.running_mean));
        f(StateRef::Buffer(&mut self.running_var));
        f(StateRef::Flag(&mut self.tracked));
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, _ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        self.mask = Some((x.shape().to_vec(), mask));
        Tensor::new(x.shape().to_vec(), data)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (shape, mask) = self.mask.as_ref().ok_or_else(|| no_cache("relu"))?;
        check_grad_shape(dy, shape, "relu")?;
        let data = dy.data().iter().zip(mask).map(|(&g, &m)| if m { g } else { 0.0 }).collect();
        Tensor::new(shape.clone(), data)
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    scale_mask: Option<(Vec<usize>, Option<Vec<f64>>)>,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout {
            rate,
            scale_mask: None,
        })
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let active = matches!(ctx.mode, Mode::Train { dropout: true }) && self.rate > 0.0;
        if !active {
            self.scale_mask = Some((x.shape().to_vec(), None));
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if ctx.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.scale_mask = Some((x.shape().to_vec(), Some(mask)));
        Tensor::new(x.shape().to_vec(), data)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (shape, mask) = self.scale_mask.as_ref().ok_or_else(|| no_cache("dropout"))?;
        check_grad_shape(dy, shape, "dropout")?;
        match mask {
            None => Ok(dy.clone()),
            Some(m) => Tensor::new(shape.clone(), dy.data().iter().zip(m).map(|(g, s)| g * s).collect()),
        }
    }
}

/// Non-overlapping average pooling along length; the remainder is dropped.
#[derive(Debug, Clone)]
pub struct AvgPool1d {
    pool: usize,
    in_shape: Option<[usize; 3]>,
}

impl AvgPool1d {
    pub fn new(pool: usize) -> Result<Self> {
        if pool == 0 {
            return Err(Error::invalid("pool size must be >= 1"));
        }
        Ok(AvgPool1d { pool, in_shape: None })
    }
}

impl Layer for AvgPool1d {
    fn forward(&mut self, x: &Tensor, _ctx: &mut ForwardCtx) -> Result<Tensor> {
        let [batch, ch, len] = x.dims::<3>("avgpool1d")?;
        if len < self.pool {
            return Err(Error::shape(format!(
                "avgpool1d with pool {} needs length >= {}, got {len}",
                self.pool, self.pool
            )));
        }
        let out_len = len / self.pool;
        let p = self.pool;
        let xd = x.data();
        let mut data = Vec::with_capacity(batch * ch * out_len);
        for row in xd.chunks_exact(len) {
            data.extend((0..out_len).map(|o| row[o * p..(o + 1) * p].iter().sum::<f64>() / p as f64));
        }
        self.in_shape = Some([batch, ch, len]);
        Tensor::new(vec![batch, ch, out_len], data)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let [batch, ch, len] = self.in_shape.ok_or_else(|| no_cache("avgpool1d"))?;
        let out_len = len / self.pool;
        check_grad_shape(dy, &[batch, ch, out_len], "avgpool1d")?;
        let p = self.pool;
        let mut dx = Tensor::zeros(&[batch, ch, len]);
        for (dst, src) in dx.data_mut().chunks_exact_mut(len).zip(dy.data().chunks_exact(out_len)) {
            for (o, g) in src.iter().enumerate() {
                dst[o * p..(o + 1) * p].iter_mut().for_each(|d| *d = g / p as f64);
            }
        }
        Ok(dx)
    }
}

/// Fully connected layer on `[batch, features]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Param::new(Tensor::zeros(&[outputs, inputs])),
            bias: Param::new(Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    /// Uniform in ±1/√fan_in for weights and bias.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (self.weight.value.shape()[1] as f64).sqrt();
        for v in self.weight.value.data_mut().iter_mut().chain(self.bias.value.data_mut()) {
            *v = rng.random_range(-bound..bound);
        }
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: &Tensor, _ctx: &mut ForwardCtx) -> Result<Tensor> {
        let [batch, inputs] = x.dims::<2>("dense")?;
        let [outputs, w_in] = self.weight.value.dims::<2>("dense weight")?;
        if inputs != w_in {
            return Err(Error::shape(format!("dense expects {w_in} features, got {inputs}")));
        }
        let mut y = Tensor::zeros(&[batch, outputs]);
        let bias = self.bias.value.data();
        for row in y.data_mut().chunks_exact_mut(outputs) {
            row.copy_from_slice(bias);
        }
        gemm(batch, inputs, outputs, x.data(), false, self.weight.value.data(), true, 1.0, y.data_mut());
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("dense"))?;
        let [batch, inputs] = x.dims::<2>("dense")?;
        let outputs = self.bias.value.len();
        check_grad_shape(dy, &[batch, outputs], "dense")?;
        for row in dy.data().chunks_exact(outputs) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        gemm(outputs, batch, inputs, dy.data(), true, x.data(), false, 1.0, &mut self.weight.grad);
        let mut dx = Tensor::zeros(&[batch, inputs]);
        gemm(batch, outputs, inputs, dy.data(), false, self.weight.value.data(), false, 0.0, dx.data_mut());
        Ok(dx)
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(StateRef)) {
        f(StateRef::Param(&mut self.weight));
        f(StateRef::Param(&mut self.bias));
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

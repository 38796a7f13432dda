//! Residual CNN-LSTM decoder:
//! ConvBlock ×3 → ResBlock ×2 → LSTM → flatten → dense(3).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{AvgPool1d, BatchNorm1d, Conv1d, Dense, Dropout, ForwardCtx, Layer, Mode, Relu, StateRef};
use super::lstm::Lstm;
use super::tensor::{Param, Tensor};
use crate::binio::*;
use crate::error::{Error, Result};
use crate::session::KIN_AXES;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub conv_filters: Vec<usize>,
    pub res_filters: Vec<[usize; 3]>,
    pub kernel: usize,
    pub dropout: f64,
    pub pool: usize,
    pub lstm_hidden: usize,
    /// Skip a ConvBlock's pooling when its input is shorter than `pool`
    /// instead of rejecting the build.
    pub auto_skip_pool: bool,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            conv_filters: vec![32, 64, 96],
            res_filters: vec![[96, 96, 96]; 2],
            kernel: 3,
            dropout: 0.5,
            pool: 3,
            lstm_hidden: 64,
            auto_skip_pool: true,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.conv_filters.iter().chain(self.res_filters.iter().flatten()).any(|&f| f == 0) {
            return bad("filter counts must be >= 1");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel size must be odd");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.pool == 0 || self.lstm_hidden == 0 {
            return bad("pool and lstm_hidden must be >= 1");
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model's shape, stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub input_series: usize,
    pub input_lags: usize,
    pub config: DecoderConfig,
    /// Whether each ConvBlock pools (false where auto-skipped).
    pub pool_applied: Vec<bool>,
    /// Sequence length after each ConvBlock.
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm1d,
    relu: Relu,
    drop: Dropout,
    pool: Option<AvgPool1d>,
}

impl ConvBlock {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, dropout: f64, pool: Option<usize>) -> Result<Self> {
        Ok(ConvBlock {
            conv: Conv1d::new(c_in, c_out, kernel)?,
            bn: BatchNorm1d::new(c_out),
            relu: Relu::default(),
            drop: Dropout::new(dropout)?,
            pool: pool.map(AvgPool1d::new).transpose()?,
        })
    }
}

impl Layer for ConvBlock {
    fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let h = self.conv.forward(x, ctx)?;
        let h = self.bn.forward(&h, ctx)?;
        let h = self.relu.forward(&h, ctx)?;
        let h = self.drop.forward(&h, ctx)?;
        match &mut self.pool {
            Some(p) => p.forward(&h, ctx),
            None => Ok(h),
        }
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let g = match &mut self.pool {
            Some(p) => p.backward(dy)?,
            None => dy.clone(),
        };
        let g = self.drop.backward(&g)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(StateRef)) {
        self.conv.visit_state(f);
        self.bn.visit_state(f);
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
}

/// Three conv→BN→ReLU→dropout stages; the block input (through a 1×1
/// conv when channel counts differ) is added to the third BN output
/// before its ReLU.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub convs: Vec<Conv1d>,
    pub bns: Vec<BatchNorm1d>,
    relus: Vec<Relu>,
    drops: Vec<Dropout>,
    pub skip: Option<Conv1d>,
}

impl ResBlock {
    pub fn new(c_in: usize, filters: [usize; 3], kernel: usize, dropout: f64) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c = c_in;
        for &f in &filters {
            convs.push(Conv1d::new(c, f, kernel)?);
            c = f;
        }
        Ok(ResBlock {
            convs,
            bns: filters.iter().map(|&f| BatchNorm1d::new(f)).collect(),
            relus: vec![Relu::default(); 3],
            drops: (0..3).map(|_| Dropout::new(dropout)).collect::<Result<_>>()?,
            skip: (c_in != filters[2]).then(|| Conv1d::new(c_in, filters[2], 1)).transpose()?,
        })
    }
}

impl Layer for ResBlock {
    fn forward(&mut self, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mut h = x.clone();
        for s in 0..3 {
            let mut z = self.bns[s].forward(&self.convs[s].forward(&h, ctx)?, ctx)?;
            if s == 2 {
                let skip = match &mut self.skip {
                    Some(conv) => conv.forward(x, ctx)?,
                    None => x.clone(),
                };
                z.data_mut().iter_mut().zip(skip.data()).for_each(|(a, b)| *a += b);
            }
            h = self.drops[s].forward(&self.relus[s].forward(&z, ctx)?, ctx)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.clone();
        let mut dskip = None;
        for s in (0..3).rev() {
            let dz = self.relus[s].backward(&self.drops[s].backward(&g)?)?;
            if s == 2 {
                dskip = Some(match &mut self.skip {
                    Some(conv) => conv.backward(&dz)?,
                    None => dz.clone(),
                });
            }
            g = self.convs[s].backward(&self.bns[s].backward(&dz)?)?;
        }
        let dskip = dskip.expect("third stage visited");
        g.data_mut().iter_mut().zip(dskip.data()).for_each(|(a, b)| *a += b);
        Ok(g)
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(StateRef)) {
        for (conv, bn) in self.convs.iter_mut().zip(&mut self.bns) {
            conv.visit_state(f);
            bn.visit_state(f);
        }
        if let Some(conv) = &mut self.skip {
            conv.visit_state(f);
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for (conv, bn) in self.convs.iter_mut().zip(&mut self.bns) {
            v.extend(conv.params_mut());
            v.extend(bn.params_mut());
        }
        if let Some(conv) = &mut self.skip {
            v.extend(conv.params_mut());
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct DecoderModel {
    descriptor: ModelDescriptor,
    pub conv_blocks: Vec<ConvBlock>,
    pub res_blocks: Vec<ResBlock>,
    pub lstm: Lstm,
    pub dense: Dense,
}

/// Builds and seeds a decoder for inputs of `series` × `lags`.
pub fn build_decoder(series: usize, lags: usize, cfg: &DecoderConfig) -> Result<DecoderModel> {
    cfg.validate()?;
    if series == 0 || lags == 0 {
        return Err(Error::invalid("decoder input must be at least 1 × 1"));
    }
    let mut conv_blocks = Vec::new();
    let (mut ch, mut len) = (series, lags);
    let mut pool_applied = Vec::new();
    let mut lengths = Vec::new();
    for &f in &cfg.conv_filters {
        let pool = if len >= cfg.pool && cfg.pool > 1 {
            Some(cfg.pool)
        } else if cfg.pool == 1 || cfg.auto_skip_pool {
            None
        } else {
            let min_lags = cfg.pool.pow(cfg.conv_filters.len() as u32);
            return Err(Error::invalid(format!(
                "input length {lags} pools to {len} before a stride-{} pool; need at least {min_lags} lags \
                 (or enable auto_skip_pool)",
                cfg.pool
            )));
        };
        if let Some(p) = pool {
            len /= p;
        }
        pool_applied.push(pool.is_some());
        lengths.push(len);
        conv_blocks.push(ConvBlock::new(ch, f, cfg.kernel, cfg.dropout, pool)?);
        ch = f;
    }
    let mut res_blocks = Vec::new();
    for &filters in &cfg.res_filters {
        res_blocks.push(ResBlock::new(ch, filters, cfg.kernel, cfg.dropout)?);
        ch = filters[2];
    }
    let lstm = Lstm::new(ch, cfg.lstm_hidden)?;
    let dense = Dense::new(cfg.lstm_hidden * len, KIN_AXES);
    let mut model = DecoderModel {
        descriptor: ModelDescriptor {
            input_series: series,
            input_lags: lags,
            config: cfg.clone(),
            pool_applied,
            lengths,
        },
        conv_blocks,
        res_blocks,
        lstm,
        dense,
    };
    model.init(cfg.seed);
    Ok(model)
}

impl DecoderModel {
    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn input_width(&self) -> usize {
        self.descriptor.input_series * self.descriptor.input_lags
    }

    fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &mut self.conv_blocks {
            b.conv.init(&mut rng);
        }
        for b in &mut self.res_blocks {
            for c in b.convs.iter_mut().chain(b.skip.as_mut()) {
                c.init(&mut rng);
            }
        }
        self.lstm.init(&mut rng);
        self.dense.init(&mut rng);
    }

    /// Flattened rows `[batch, M·N]` → predictions `[batch, 3]`.
    pub fn forward(&mut self, rows: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let [batch, width] = rows.dims::<2>("decoder input")?;
        if width != self.input_width() {
            return Err(Error::shape(format!(
                "decoder built for {} features ({} × {}), got {width}",
                self.input_width(),
                self.descriptor.input_series,
                self.descriptor.input_lags
            )));
        }
        let mut ctx = ForwardCtx { mode, rng };
        let mut h = rows
            .clone()
            .reshape(&[batch, self.descriptor.input_series, self.descriptor.input_lags])?;
        for b in &mut self.conv_blocks {
            h = b.forward(&h, &mut ctx)?;
        }
        for b in &mut self.res_blocks {
            h = b.forward(&h, &mut ctx)?;
        }
        h = self.lstm.forward(&h, &mut ctx)?;
        let flat = h.len() / batch;
        self.dense.forward(&h.reshape(&[batch, flat])?, &mut ctx)
    }

    /// Backpropagates `d loss / d output`; returns the gradient w.r.t. the
    /// flattened input rows.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let g = self.dense.backward(dy)?;
        let batch = g.shape()[0];
        let last_len = *self.descriptor.lengths.last().unwrap_or(&self.descriptor.input_lags);
        let mut g = self.lstm.backward(&g.reshape(&[batch, self.lstm.hidden(), last_len])?)?;
        for b in self.res_blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        for b in self.conv_blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        g.reshape(&[batch, self.input_width()])
    }

    pub fn visit_state(&mut self, f: &mut dyn FnMut(StateRef)) {
        for b in &mut self.conv_blocks {
            b.visit_state(f);
        }
        for b in &mut self.res_blocks {
            b.visit_state(f);
        }
        self.lstm.visit_state(f);
        self.dense.visit_state(f);
    }

    /// Parameters in the same order as `visit_state`.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for b in &mut self.conv_blocks {
            v.extend(b.params_mut());
        }
        for b in &mut self.res_blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.lstm.params_mut());
        v.extend(self.dense.params_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        self.visit_state(&mut |s| {
            if let StateRef::Param(p) = s {
                p.zero_grad();
            }
        });
    }

    pub fn n_params(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// FNV-1a over the bit patterns of all parameters and buffers.
    pub fn checksum(&mut self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        self.visit_state(&mut |s| match s {
            StateRef::Param(p) => p.value.data().iter().for_each(|v| eat(v.to_bits())),
            StateRef::Buffer(b) => b.iter().for_each(|v| eat(v.to_bits())),
            StateRef::Flag(f) => eat(*f as u64),
        });
        h
    }

    /// Eval-mode predictions for row-major inputs, `batch` rows at a time.
    pub fn predict(&mut self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let width = self.input_width();
        if inputs.len() % width != 0 {
            return Err(Error::shape(format!(
                "input buffer of {} values is not a multiple of {width}",
                inputs.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(inputs.len() / width * KIN_AXES);
        for chunk in inputs.chunks(batch.max(1) * width) {
            let x = Tensor::new(vec![chunk.len() / width, width], chunk.to_vec())?;
            out.extend_from_slice(self.forward(&x, Mode::Eval, &mut rng)?.data());
        }
        Ok(out)
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read(&mut BufReader::new(f))
    }

    pub fn write<W: Write>(&mut self, w: &mut W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        write_u8(w, MODEL_VERSION)?;
        let desc = serde_json::to_string(&self.descriptor)
            .map_err(|e| Error::format("model descriptor", e.to_string()))?;
        write_str(w, &desc)?;
        let mut res = Ok(());
        self.visit_state(&mut |s| {
            if res.is_err() {
                return;
            }
            res = match s {
                StateRef::Param(p) => write_u64(w, p.value.len() as u64).and_then(|_| write_f64s(w, p.value.data())),
                StateRef::Buffer(b) => write_u64(w, b.len() as u64).and_then(|_| write_f64s(w, b)),
                StateRef::Flag(f) => write_u8(w, *f as u8),
            };
        });
        res
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "model file";
        expect_magic(r, MODEL_MAGIC, WHAT)?;
        let version = read_u8(r, WHAT)?;
        if version != MODEL_VERSION {
            return Err(Error::format(WHAT, format!("unsupported version {version}")));
        }
        let desc: ModelDescriptor = serde_json::from_str(&read_str(r, WHAT)?)
            .map_err(|e| Error::format(WHAT, format!("bad descriptor: {e}")))?;
        let mut model = build_decoder(desc.input_series, desc.input_lags, &desc.config)?;
        if model.descriptor != desc {
            return Err(Error::format(WHAT, "descriptor does not match the rebuilt architecture"));
        }
        let mut res = Ok(());
        let read_vec = |dst: &mut [f64], r: &mut R| -> Result<()> {
            let n = read_u64(r, WHAT)? as usize;
            if n != dst.len() {
                return Err(Error::format(WHAT, format!("tensor of {n} values, expected {}", dst.len())));
            }
            dst.copy_from_slice(&read_f64s(r, n, WHAT)?);
            Ok(())
        };
        model.visit_state(&mut |s| {
            if res.is_err() {
                return;
            }
            res = match s {
                StateRef::Param(p) => read_vec(p.value.data_mut(), r),
                StateRef::Buffer(b) => read_vec(b, r),
                StateRef::Flag(f) => read_u8(r, WHAT).map(|v| *f = v != 0),
            };
        });
        res?;
        Ok(model)
    }
}

const MODEL_MAGIC: &[u8; 8] = b"PMMODEL\0";
const MODEL_VERSION: u8 = 1;

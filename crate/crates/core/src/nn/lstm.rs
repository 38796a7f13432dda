//! Single-layer LSTM over the length axis, returning the whole hidden
//! sequence. Gate order in the stacked weights is i, f, g, o.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gemm::gemm;
use super::layers::{ForwardCtx, Layer, StateRef};
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Lstm {
    /// 4H × C
    pub w_ih: Param,
    /// 4H × H
    pub w_hh: Param,
    /// 4H
    pub bias: Param,
    input: usize,
    hidden: usize,
    cache: Option<LstmCache>,
}

#[derive(Debug, Clone)]
struct LstmCache {
    batch: usize,
    len: usize,
    /// Per step: x_t (B × C), h_{t-1}, c_{t-1}, activated gates (B × 4H), c_t.
    steps: Vec<Step>,
}

#[derive(Debug, Clone)]
struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Lstm {
    pub fn new(input: usize, hidden: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::invalid("lstm sizes must be >= 1"));
        }
        Ok(Lstm {
            w_ih: Param::new(Tensor::zeros(&[4 * hidden, input])),
            w_hh: Param::new(Tensor::zeros(&[4 * hidden, hidden])),
            bias: Param::new(Tensor::zeros(&[4 * hidden])),
            input,
            hidden,
            cache: None,
        })
    }

    /// Uniform in ±1/√H for every weight and bias.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let bound = 1.0 / (self.hidden as f64).sqrt();
        for p in [&mut self.w_ih, &mut self.w_hh, &mut self.bias] {
            for v in p.value.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

impl Layer for Lstm {
    /// `[batch, C, L]` → `[batch, H, L]`; h₀ = c₀ = 0.
    fn forward(&mut self, x: &Tensor, _ctx: &mut ForwardCtx) -> Result<Tensor> {
        let [batch, c_in, len] = x.dims::<3>("lstm")?;
        if c_in != self.input {
            return Err(Error::shape(format!(
                "lstm expects {} input features, got {c_in}",
                self.input
            )));
        }
        let h4 = 4 * self.hidden;
        let hid = self.hidden;
        let xd = x.data();
        let bias = self.bias.value.data();
        let mut h = vec![0.0; batch * hid];
        let mut c = vec![0.0; batch * hid];
        let mut steps = Vec::with_capacity(len);
        let mut y = Tensor::zeros(&[batch, hid, len]);
        for t in 0..len {
            let mut xt = vec![0.0; batch * c_in];
            for b in 0..batch {
                for ch in 0..c_in {
                    xt[b * c_in + ch] = xd[(b * c_in + ch) * len + t];
                }
            }
            let mut z = vec![0.0; batch * h4];
            for row in z.chunks_exact_mut(h4) {
                row.copy_from_slice(bias);
            }
            gemm(batch, c_in, h4, &xt, false, self.w_ih.value.data(), true, 1.0, &mut z);
            gemm(batch, hid, h4, &h, false, self.w_hh.value.data(), true, 1.0, &mut z);
            let mut c_new = vec![0.0; batch * hid];
            let mut h_new = vec![0.0; batch * hid];
            for b in 0..batch {
                let zr = &mut z[b * h4..(b + 1) * h4];
                for j in 0..hid {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[hid + j]);
                    let g = zr[2 * hid + j].tanh();
                    let o = sigmoid(zr[3 * hid + j]);
                    zr[j] = i;
                    zr[hid + j] = f;
                    zr[2 * hid + j] = g;
                    zr[3 * hid + j] = o;
                    let cv = f * c[b * hid + j] + i * g;
                    c_new[b * hid + j] = cv;
                    h_new[b * hid + j] = o * cv.tanh();
                }
            }
            let yd = y.data_mut();
            for b in 0..batch {
                for j in 0..hid {
                    yd[(b * hid + j) * len + t] = h_new[b * hid + j];
                }
            }
            steps.push(Step {
                x: xt,
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new.clone()),
                gates: z,
                c: c_new,
            });
        }
        self.cache = Some(LstmCache { batch, len, steps });
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.as_ref().ok_or_else(|| Error::invalid("lstm: backward without forward"))?;
        let (batch, len, hid, c_in) = (cache.batch, cache.len, self.hidden, self.input);
        if dy.shape() != [batch, hid, len] {
            return Err(Error::shape(format!(
                "lstm gradient shape {:?}, expected {:?}",
                dy.shape(),
                [batch, hid, len]
            )));
        }
        let h4 = 4 * hid;
        let dyd = dy.data();
        let mut dh_next = vec![0.0; batch * hid];
        let mut dc_next = vec![0.0; batch * hid];
        let mut dx = Tensor::zeros(&[batch, c_in, len]);
        let mut dz = vec![0.0; batch * h4];
        let mut dxt = vec![0.0; batch * c_in];
        for t in (0..len).rev() {
            let s = &cache.steps[t];
            for b in 0..batch {
                for j in 0..hid {
                    let k = b * hid + j;
                    let g = &s.gates[b * h4..(b + 1) * h4];
                    let (i, f, gg, o) = (g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]);
                    let tc = s.c[k].tanh();
                    let dh = dyd[(b * hid + j) * len + t] + dh_next[k];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                    let dzr = &mut dz[b * h4..(b + 1) * h4];
                    dzr[j] = dc * gg * i * (1.0 - i);
                    dzr[hid + j] = dc * s.c_prev[k] * f * (1.0 - f);
                    dzr[2 * hid + j] = dc * i * (1.0 - gg * gg);
                    dzr[3 * hid + j] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
            }
            for row in dz.chunks_exact(h4) {
                for (gb, d) in self.bias.grad.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            gemm(h4, batch, c_in, &dz, true, &s.x, false, 1.0, &mut self.w_ih.grad);
            gemm(h4, batch, hid, &dz, true, &s.h_prev, false, 1.0, &mut self.w_hh.grad);
            gemm(batch, h4, c_in, &dz, false, self.w_ih.value.data(), false, 0.0, &mut dxt);
            gemm(batch, h4, hid, &dz, false, self.w_hh.value.data(), false, 0.0, &mut dh_next);
            let dxd = dx.data_mut();
            for b in 0..batch {
                for ch in 0..c_in {
                    dxd[(b * c_in + ch) * len + t] = dxt[b * c_in + ch];
                }
            }
        }
        Ok(dx)
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(StateRef)) {
        f(StateRef::Param(&mut self.w_ih));
        f(StateRef::Param(&mut self.w_hh));
        f(StateRef::Param(&mut self.bias));
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

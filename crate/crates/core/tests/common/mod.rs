#![allow(dead_code)]

use premotor::nn::{build_decoder, mse_loss, DecoderConfig, ForwardCtx, Layer, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Relative error with a floor on the scale so that gradients that are
/// zero up to round-off compare by absolute error instead.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn probe_loss<L: Layer>(layer: &mut L, x: &Tensor, r: &Tensor, rng: &mut ChaCha8Rng) -> f64 {
    let mut ctx = ForwardCtx {
        mode: Mode::Train { dropout: false },
        rng,
    };
    let y = layer.forward(x, &mut ctx).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Max relative error between backward() and central differences of
/// `sum(r ⊙ layer(x))`, over every input and parameter entry.
pub fn layer_grad_error<L: Layer>(layer: &mut L, x: &Tensor, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = ForwardCtx {
        mode: Mode::Train { dropout: false },
        rng: &mut rng,
    };
    let y = layer.forward(x, &mut ctx).unwrap();
    let r = random_tensor(y.shape(), &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&r).unwrap();
    let analytic_params: Vec<Vec<f64>> = layer.params_mut().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_EPS;
        let up = probe_loss(layer, &xp, &r, &mut rng);
        xp.data_mut()[i] = orig - FD_EPS;
        let down = probe_loss(layer, &xp, &r, &mut rng);
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_err(dx.data()[i], (up - down) / (2.0 * FD_EPS)));
    }
    for (pi, grads) in analytic_params.iter().enumerate() {
        for (i, &g) in grads.iter().enumerate() {
            let orig = layer.params_mut()[pi].value.data()[i];
            layer.params_mut()[pi].value.data_mut()[i] = orig + FD_EPS;
            let up = probe_loss(layer, x, &r, &mut rng);
            layer.params_mut()[pi].value.data_mut()[i] = orig - FD_EPS;
            let down = probe_loss(layer, x, &r, &mut rng);
            layer.params_mut()[pi].value.data_mut()[i] = orig;
            worst = worst.max(rel_err(g, (up - down) / (2.0 * FD_EPS)));
        }
    }
    worst
}

/// Random values bounded away from the ReLU kink.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = random_tensor(shape, rng);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    t
}

pub fn mse_grad_error(shape: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = random_tensor(shape, &mut rng);
    let target = random_tensor(shape, &mut rng);
    let (_, grad) = mse_loss(&pred, &target).unwrap();
    let mut worst = 0.0f64;
    let mut p = pred.clone();
    for i in 0..pred.len() {
        let orig = p.data()[i];
        p.data_mut()[i] = orig + FD_EPS;
        let up = mse_loss(&p, &target).unwrap().0;
        p.data_mut()[i] = orig - FD_EPS;
        let down = mse_loss(&p, &target).unwrap().0;
        p.data_mut()[i] = orig;
        worst = worst.max(rel_err(grad.data()[i], (up - down) / (2.0 * FD_EPS)));
    }
    worst
}

/// Small decoder configurations that still exercise pooling, the 1×1 skip
/// path and a multi-step LSTM.
pub fn tiny_decoder_cases() -> Vec<(usize, usize, usize, DecoderConfig)> {
    let base = |conv: Vec<usize>, res: Vec<[usize; 3]>, hidden: usize, seed: u64| DecoderConfig {
        conv_filters: conv,
        res_filters: res,
        lstm_hidden: hidden,
        seed,
        ..DecoderConfig::default()
    };
    vec![
        // (series, lags, batch, config)
        (2, 27, 3, base(vec![3, 3, 4], vec![[4, 4, 4], [4, 3, 5]], 3, 1)),
        (3, 15, 2, base(vec![2, 3, 3], vec![[3, 3, 3]], 2, 2)),
        (1, 20, 4, base(vec![3, 2, 2], vec![[2, 2, 3]], 3, 3)),
        (4, 9, 2, base(vec![2, 2, 2], vec![[2, 3, 2], [2, 2, 2]], 2, 4)),
        (2, 40, 3, base(vec![2, 3, 2], vec![[3, 3, 3]], 4, 5)),
    ]
}

/// Max relative error of the full decoder's MSE gradient w.r.t. inputs and
/// every parameter (dropout disabled, batch statistics on).
pub fn decoder_grad_error(series: usize, lags: usize, batch: usize, cfg: &DecoderConfig) -> f64 {
    let mut model = build_decoder(series, lags, cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 100);
    let x = random_tensor(&[batch, series * lags], &mut rng);
    let target = random_tensor(&[batch, 3], &mut rng);
    let mode = Mode::Train { dropout: false };
    let mut loss_at = |model: &mut premotor::nn::DecoderModel, x: &Tensor| {
        let y = model.forward(x, mode, &mut rng).unwrap();
        mse_loss(&y, &target).unwrap()
    };
    model.zero_grad();
    let (_, g) = loss_at(&mut model, &x);
    let dx = model.backward(&g).unwrap();
    let analytic: Vec<Vec<f64>> = model.params_mut().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_EPS;
        let up = loss_at(&mut model, &xp).0;
        xp.data_mut()[i] = orig - FD_EPS;
        let down = loss_at(&mut model, &xp).0;
        xp.data_mut()[i] = orig;
        worst = worst.max(rel_err(dx.data()[i], (up - down) / (2.0 * FD_EPS)));
    }
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &ga) in grads.iter().enumerate() {
            let orig = model.params_mut()[pi].value.data()[i];
            model.params_mut()[pi].value.data_mut()[i] = orig + FD_EPS;
            let up = loss_at(&mut model, &x).0;
            model.params_mut()[pi].value.data_mut()[i] = orig - FD_EPS;
            let down = loss_at(&mut model, &x).0;
            model.params_mut()[pi].value.data_mut()[i] = orig;
            worst = worst.max(rel_err(ga, (up - down) / (2.0 * FD_EPS)));
        }
    }
    worst
}

/// Smooth rows (each series is an offset plus a linear trend over its
/// lags) with targets that are a fixed linear map of the inputs, scaled to
/// roughly unit variance per axis.
pub fn linear_dataset(series: usize, lags: usize, rows: usize, seed: u64) -> premotor::dataset::WindowedDataset {
    use premotor::dataset::{FeatureLayout, WindowedDataset};
    let mut map_rng = ChaCha8Rng::seed_from_u64(1234);
    // Inputs: offset ~ U(-1.7, 1.7) (unit variance); lag-average equals it.
    let w: Vec<f64> = (0..series * 3)
        .map(|_| map_rng.random_range(-1.0..1.0) * (3.0 / series as f64).sqrt())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(rows * series * lags);
    let mut targets = Vec::with_capacity(rows * 3);
    let centre = (lags as f64 - 1.0) / 2.0;
    for _ in 0..rows {
        let mut row = Vec::with_capacity(series * lags);
        for _ in 0..series {
            let offset = rng.random_range(-1.7..1.7);
            let slope = rng.random_range(-0.5..0.5) / lags as f64;
            row.extend((0..lags).map(|t| offset + slope * (t as f64 - centre)));
        }
        for a in 0..3 {
            let t: f64 = (0..series)
                .map(|s| w[s * 3 + a] * row[s * lags..(s + 1) * lags].iter().sum::<f64>() / lags as f64)
                .sum();
            targets.push(t);
        }
        inputs.extend(row);
    }
    WindowedDataset {
        inputs,
        targets,
        trial_ids: vec![0; rows],
        layout: FeatureLayout { series, lags },
    }
}

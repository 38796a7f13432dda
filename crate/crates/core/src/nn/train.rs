//! Mini-batch training with early stopping on validation MSE.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::loss::{mse, mse_loss};
use super::model::DecoderModel;
use super::optim::{Adam, AdamConfig};
use super::tensor::Tensor;
use crate::dataset::WindowedDataset;
use crate::error::{Error, Result};
use crate::session::KIN_AXES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            learning_rate: adam.lr,
            batch_size: 64,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.eps,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch_size and max_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
        }
    }
}

/// Outcome of a training run. Epochs are numbered from 1.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    /// Checksum of the restored (best-validation) weights.
    pub param_checksum: u64,
    pub wall_time: Duration,
}

/// Equality ignores `wall_time`; loss values are compared bitwise.
impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.train_loss) == bits(&other.train_loss)
            && bits(&self.val_loss) == bits(&other.val_loss)
            && self.best_epoch == other.best_epoch
            && self.stopped_epoch == other.stopped_epoch
            && self.early_stopped == other.early_stopped
            && self.param_checksum == other.param_checksum
    }
}

/// Produces the validation loss that drives early stopping.
pub trait Validator {
    fn validation_loss(&mut self, epoch: usize, model: &mut DecoderModel, val: &WindowedDataset) -> Result<f64>;
}

/// Eval-mode MSE over the whole validation set.
#[derive(Debug, Clone, Copy)]
pub struct MseValidator {
    pub batch_size: usize,
}

impl Validator for MseValidator {
    fn validation_loss(&mut self, _epoch: usize, model: &mut DecoderModel, val: &WindowedDataset) -> Result<f64> {
        let pred = model.predict(&val.inputs, self.batch_size)?;
        mse(&pred, &val.targets)
    }
}

pub fn train(
    model: &mut DecoderModel,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut v = MseValidator {
        batch_size: cfg.batch_size.max(256),
    };
    train_with_validator(model, train, val, cfg, &mut v)
}

/// Batch boundaries; a trailing batch of one row is folded into the
/// previous batch so batch statistics stay defined.
fn batch_ranges(n: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(a, b)| b - a == 1) {
        let (_, end) = out.pop().expect("non-empty");
        out.last_mut().expect("len > 1").1 = end;
    }
    out
}

pub fn train_with_validator(
    model: &mut DecoderModel,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    validator: &mut dyn Validator,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let width = model.input_width();
    if train.width() != width || val.width() != width {
        return Err(Error::shape(format!(
            "model expects {width} features, datasets have {} (train) and {} (val)",
            train.width(),
            val.width()
        )));
    }
    let start = Instant::now();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(cfg.adam());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
        early_stopped: false,
        param_checksum: 0,
        wall_time: Duration::ZERO,
    };
    let mut best: Option<(f64, DecoderModel)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (a, b) in batch_ranges(order.len(), cfg.batch_size) {
            let rows = &order[a..b];
            let mut x = Vec::with_capacity(rows.len() * width);
            let mut y = Vec::with_capacity(rows.len() * KIN_AXES);
            for &r in rows {
                x.extend_from_slice(train.input(r));
                y.extend_from_slice(train.target(r));
            }
            let x = Tensor::new(vec![rows.len(), width], x)?;
            let y = Tensor::new(vec![rows.len(), KIN_AXES], y)?;
            model.zero_grad();
            let pred = model.forward(&x, Mode::Train { dropout: true }, &mut dropout_rng)?;
            let (loss, grad) = mse_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            model.backward(&grad)?;
            adam.step(&mut model.params_mut())?;
            total += loss * rows.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = validator.validation_loss(epoch, model, val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_loss });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.stopped_epoch = epoch;
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                report.early_stopped = true;
                break;
            }
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    report.param_checksum = model.checksum();
    report.wall_time = start.elapsed();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_tail_batch_is_merged() {
        assert_eq!(batch_ranges(129, 64), vec![(0, 64), (64, 129)]);
        assert_eq!(batch_ranges(130, 64), vec![(0, 64), (64, 128), (128, 130)]);
        assert_eq!(batch_ranges(1, 64), vec![(0, 1)]);
    }
}

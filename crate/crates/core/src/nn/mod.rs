//! Small reverse-mode neural-network engine and the decoders built on it.
//!
//! Each layer caches what its backward pass needs during `forward`; models
//! chain those calls in reverse. There is no tape: the architectures here
//! are fixed stacks, so explicit per-layer backward passes are enough.

mod gemm;
pub mod layers;
pub mod loss;
pub mod lstm;
pub mod mlr;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

use std::path::Path;

pub use layers::{AvgPool1d, BatchNorm1d, Conv1d, Dense, Dropout, ForwardCtx, Layer, Mode, Relu, StateRef};
pub use loss::{mse, mse_loss};
pub use lstm::Lstm;
pub use mlr::{mlr_fit, MlrModel, DEFAULT_RIDGE};
pub use model::{build_decoder, ConvBlock, DecoderConfig, DecoderModel, ModelDescriptor, ResBlock};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Param, Tensor};
pub use train::{train, train_with_validator, MseValidator, TrainConfig, TrainReport, Validator};

use crate::error::{Error, Result};

/// Either kind of trained decoder, as stored on disk.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    CnnLstm(DecoderModel),
    Mlr(MlrModel),
}

impl TrainedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        if bytes.starts_with(mlr::MLR_MAGIC) {
            MlrModel::read(&mut bytes.as_slice()).map(TrainedModel::Mlr)
        } else {
            DecoderModel::read(&mut bytes.as_slice()).map(TrainedModel::CnnLstm)
        }
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        match self {
            TrainedModel::CnnLstm(m) => m.save(path),
            TrainedModel::Mlr(m) => m.save(path),
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            TrainedModel::CnnLstm(m) => m.input_width(),
            TrainedModel::Mlr(m) => m.input_width(),
        }
    }

    pub fn predict(&mut self, inputs: &[f64]) -> Result<Vec<f64>> {
        match self {
            TrainedModel::CnnLstm(m) => m.predict(inputs, 256),
            TrainedModel::Mlr(m) => m.predict(inputs),
        }
    }
}

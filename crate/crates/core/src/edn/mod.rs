//! Encoder-decoder network: a ReLU encoder producing unit-sum codes shared by
//! two linear decoders whose dictionaries are trainable.

mod adam;
mod decoder;
mod encoder;
mod loss;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use decoder::{decode, dict_reparam, DecoderParams, DICT_EPSILON};
pub use encoder::{encode_raw, encoder_forward, EncoderParams, Layer, CODE_EPSILON, DEFAULT_CODE_BIAS};
pub use loss::{compute_gradients, loss_stage1, loss_stage2, loss_stage2_parts, Gradients, LossParts, Stage};
pub use train::{
    check_model_invariants, train_stage1, train_stage1_observed, train_stage2, train_stage2_observed, EpochObserver,
    EpochRecord, EpochState, Stage1Output, Stage2Output, TrainConfig,
};

use crate::error::Result;
use crate::matrix::{Activation, Dictionary, FrameMatrix};
use crate::scalar::Scalar;

/// Encodes with `theta` and decodes with the target dictionary.
pub fn edn_convert<T: Scalar>(x: &FrameMatrix<T>, theta: &EncoderParams<T>, uy: &Dictionary<T>) -> Result<FrameMatrix<T>> {
    decode(&encoder_forward(x, theta)?, uy)
}

/// A trained network: encoder plus both decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EdnModel<T: Scalar> {
    pub encoder: EncoderParams<T>,
    pub decoders: DecoderParams<T>,
}

impl<T: Scalar> EdnModel<T> {
    pub fn convert(&self, x: &FrameMatrix<T>) -> Result<FrameMatrix<T>> {
        edn_convert(x, &self.encoder, &self.decoders.uy())
    }

    pub fn reconstruct(&self, x: &FrameMatrix<T>) -> Result<FrameMatrix<T>> {
        edn_convert(x, &self.encoder, &self.decoders.ux())
    }

    /// Rectified codes before normalization.
    pub fn raw_codes(&self, x: &FrameMatrix<T>) -> Result<Activation<T>> {
        encode_raw(x, &self.encoder)
    }
}

//! Spectral conversion with exemplar-based NMF and its encoder-decoder
//! reformulation with trainable dictionaries.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! command-line pipeline and the on-disk format use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod edn;
pub mod error;
pub mod eval;
pub mod features;
pub mod matrix;
pub mod nmf;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;

pub type FrameMatrix = matrix::FrameMatrix<Real>;
pub type Dictionary = matrix::Dictionary<Real>;
pub type Activation = matrix::Activation<Real>;
pub type Utterance = features::Utterance<Real>;
pub type NormalizedUtterance = features::NormalizedUtterance<Real>;
pub type F0Stats = features::F0Stats<Real>;
pub type SynthCorpus = features::SynthCorpus<Real>;
pub type SolveOptions = nmf::SolveOptions<Real>;
pub type EncoderParams = edn::EncoderParams<Real>;
pub type DecoderParams = edn::DecoderParams<Real>;
pub type EdnModel = edn::EdnModel<Real>;
pub type TrainConfig = edn::TrainConfig<Real>;
pub type AdamState = edn::AdamState<Real>;
pub type EvalReport = eval::EvalReport<Real>;

/// Single-precision aliases.
pub mod f32 {
    pub type FrameMatrix = crate::matrix::FrameMatrix<f32>;
    pub type Dictionary = crate::matrix::Dictionary<f32>;
    pub type Activation = crate::matrix::Activation<f32>;
    pub type EncoderParams = crate::edn::EncoderParams<f32>;
    pub type DecoderParams = crate::edn::DecoderParams<f32>;
    pub type TrainConfig = crate::edn::TrainConfig<f32>;
}

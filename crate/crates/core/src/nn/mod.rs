//! A small, fixed-topology convolutional network written from scratch:
//! 3x3 same-padded convolutions, 2x2 max pooling, inverted dropout,
//! flatten and dense layers, binary cross-entropy and Adam.
//!
//! Activations are stored as `T` (`f32` for training, `f64` for gradient
//! checks); every reduction accumulates in `f64`.

mod adam;
mod arch;
mod checkpoint;
mod layers;
mod loss;
mod model;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use arch::{Activation, Architecture, LayerInfo, LayerSpec, Shape};
pub use checkpoint::{load_checkpoint, load_optimizer, save_checkpoint, save_optimizer, CheckpointMeta};
pub use layers::{conv2d_forward, dense_forward, dropout_forward, maxpool_forward};
pub use loss::{bce_loss, predicted_class, BCE_EPSILON};
pub(crate) use model::mix_seed;
pub use model::{Backprop, BatchOutput, DropoutKey, Mode, Model, Seed, Trace};
pub use tensor::Tensor4;

use std::fmt::Debug;

/// Storage precision for activations and parameters.
pub trait Real:
    num_traits::Float + Copy + Send + Sync + Default + Debug + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("layer {layer}: expected {expected} input channels, got {got}")]
    ChannelMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("layer {layer}: max pooling needs even spatial dims, got {h}x{w}")]
    OddPool { layer: usize, h: usize, w: usize },
    #[error("layer {layer}: dense layer needs a flat input")]
    NotFlat { layer: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dropout rate must be in [0, 1), got {0}")]
    DropoutRate(f64),
    #[error("the network must end in a single sigmoid unit")]
    Head,
    #[error("layer {0} is not a convolution")]
    NotConv(usize),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Checkpoint {
        path: std::path::PathBuf,
        message: String,
    },
}

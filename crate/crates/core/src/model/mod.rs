//! Convolutional encoder and autoregressive transformer decoder with
//! hand-written backpropagation.
//!
//! The encoder maps a page to a grid of `model_dim`-vectors plus a fixed 2D
//! sinusoidal encoding. The decoder reads the flattened grid through
//! cross-attention and emits one token per step, starting from a learned
//! start vector, until it produces EOT.

mod gradcheck;
mod infer;
mod network;
mod ops;
mod params;
mod posenc;
mod synth;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::ImagingError;

pub use gradcheck::{grad_check, GradCheckComponent, GradCheckReport, RELATIVE_FLOOR};
pub use infer::{infer_greedy, preprocess, Prediction};
pub use network::{
    is_token_indexed, FeatureMap, Network, EMBEDDING, PREDICTION_BIAS, PREDICTION_WEIGHT,
};
pub use ops::{gemm, View};
pub use params::{ParamStore, Tensor};
pub use posenc::{sinusoidal_1d, sinusoidal_2d};
pub use synth::{PrintedStream, ReplayStream, SynthStream};
pub use train::{
    apply_label_noise, curriculum_fraction, sequence_cer, train, Curriculum, EpochLog, Optimizer,
    Sample, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid training configuration: {0}")]
    TrainConfig(String),
    #[error("image {height}×{width} is smaller than the encoder stride {stride_y}×{stride_x}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        stride_y: usize,
        stride_x: usize,
    },
    #[error("prefix of {len} tokens reaches max_sequence_length {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("token id {0} is outside the dictionary")]
    UnknownToken(u32),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// One convolution: square kernel, zero padding `kernel / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride_y: usize,
    pub stride_x: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Convolutions in order; the last one's channel count is `model_dim`.
    pub conv: Vec<ConvSpec>,
    pub decoder_layers: usize,
    pub model_dim: usize,
    pub attention_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_sequence_length: usize,
    pub label_noise_prob: f64,
    /// Pages are resized to this height before encoding.
    pub input_height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(format!("unknown preset {s:?} (expected desk or paper)")),
        }
    }
}

fn conv(channels: usize, kernel: usize, stride_y: usize, stride_x: usize) -> ConvSpec {
    ConvSpec {
        channels,
        kernel,
        stride_y,
        stride_x,
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            conv: vec![
                conv(8, 3, 2, 2),
                conv(16, 3, 2, 3),
                conv(32, 3, 2, 1),
                conv(64, 3, 2, 1),
                conv(64, 1, 1, 1),
            ],
            decoder_layers: 2,
            model_dim: 64,
            attention_heads: 2,
            ffn_dim: 256,
            dropout: 0.1,
            max_sequence_length: 256,
            label_noise_prob: 0.1,
            input_height: 256,
        }
    }

    /// Five convolutions and eight decoder layers of width 256 with four heads.
    pub fn paper() -> Self {
        Self {
            conv: vec![
                conv(32, 3, 2, 2),
                conv(64, 3, 2, 2),
                conv(128, 3, 2, 2),
                conv(256, 3, 2, 1),
                conv(256, 3, 2, 1),
            ],
            decoder_layers: 8,
            model_dim: 256,
            attention_heads: 4,
            ffn_dim: 1024,
            dropout: 0.1,
            max_sequence_length: 256,
            label_noise_prob: 0.1,
            input_height: 1900,
        }
    }

    pub fn conv_layers(&self) -> usize {
        self.conv.len()
    }

    /// Product of the strides along (y, x).
    pub fn total_stride(&self) -> (usize, usize) {
        self.conv
            .iter()
            .fold((1, 1), |(y, x), c| (y * c.stride_y, x * c.stride_x))
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.attention_heads.max(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.conv.is_empty() {
            return err("at least one convolution is required".into());
        }
        if self.conv.iter().any(|c| {
            c.channels == 0
                || c.kernel == 0
                || c.kernel % 2 == 0
                || c.stride_x == 0
                || c.stride_y == 0
        }) {
            return err("convolutions need positive channels and strides and an odd kernel".into());
        }
        if self.conv.last().map(|c| c.channels) != Some(self.model_dim) {
            return err(format!(
                "last convolution must output model_dim = {} channels",
                self.model_dim
            ));
        }
        if self.model_dim == 0
            || self.attention_heads == 0
            || self.decoder_layers == 0
            || self.ffn_dim == 0
        {
            return err("dimensions must be positive".into());
        }
        if self.model_dim % self.attention_heads != 0 {
            return err(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.attention_heads
            ));
        }
        if self.model_dim % 4 != 0 {
            return err("model_dim must be a multiple of 4 for the 2D positional encoding".into());
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.label_noise_prob) {
            return err("dropout must lie in [0, 1) and label_noise_prob in [0, 1]".into());
        }
        if self.max_sequence_length < 2 || self.input_height == 0 {
            return err("max_sequence_length must be at least 2 and input_height positive".into());
        }
        Ok(())
    }
}

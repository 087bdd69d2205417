//! Vision-transformer encoder, weights and linear readout.

mod config;
mod model;
mod weights;

pub use config::{ModelConfig, READOUT_LAYERS};
pub use model::{AttentionCapture, ClassScores, ForwardOutput, TokenSequence, VisionTransformer};
pub use weights::{load_weights, WeightContainer};

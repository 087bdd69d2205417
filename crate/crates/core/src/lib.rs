//! Saccade-style token selection for vision transformers.
//!
//! A ViT classifies an image from a handful of foveal windows chosen by a
//! saliency map (its own `[CLS]` attention, or a baseline). Hidden patches
//! are removed from the token sequence rather than zeroed.

pub mod container;
pub mod error;
pub mod harness;
pub mod image;
pub mod saccade;
pub mod saliency;
pub mod tensor;
pub mod vit;

pub use container::{Manifest, NamedTensor, TensorArchive, TensorEntry};
pub use error::{Error, Result};
pub use image::{ImageTensor, PreprocessConfig, RgbImage};
pub use saccade::{FoveaSpec, SaccadeTrace};
pub use saliency::{SaliencyGrid, SourceTag};
pub use tensor::{Grid2D, Matrix};
pub use vit::{ClassScores, ModelConfig, TokenSequence, VisionTransformer, WeightContainer};

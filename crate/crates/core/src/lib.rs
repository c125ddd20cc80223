//! Context-aware emotion recognition: a face stream and a face-hidden context
//! stream with spatial attention, fused by learned per-sample weights.
//!
//! Everything (layers, backward passes, training, data preparation) is
//! implemented directly on dense tensors; see the crate README for usage.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod layers;
pub mod model;
pub mod params;
pub mod streams;
pub mod tensor;
pub mod training;

pub use config::{ArchConfig, Geometry, ModelConfig, Scale, Variant, NUM_CLASSES};
pub use error::{Error, Result};
pub use layers::Mode;
pub use model::{ablation_variant, init_params, model_backward, model_forward, AblationFlags, ModelParams};
pub use tensor::{Scalar, Shape5, Tensor};

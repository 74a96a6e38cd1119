//! The float CNN: architecture description, layer kernels and forward pass.

mod config;
pub mod layers;
mod model;

pub use config::{check_input, LayerSpec, ModelConfig, Shape};
pub use model::{BatchNorm, Conv2d, Dense, ForwardCache, Layer, LayerAux, Mode, Model};

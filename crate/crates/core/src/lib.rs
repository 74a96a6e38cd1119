//! Diabetic-retinopathy grading toolkit: fundus preprocessing, a small CNN
//! trained with Adadelta, post-training int8 quantization with an
//! integer-only inference path, dataset handling and evaluation.
//!
//! The network, training and augmentation code is generic over the
//! [`Scalar`] type; `f32` is used for real work and `f64` for gradient
//! checks. Concrete aliases are exported at the crate root.

pub mod augment;
pub mod container;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imageproc;
pub mod inference;
pub mod network;
pub mod quantize;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Number of disease stages (labels 0 through 4).
pub const NUM_CLASSES: usize = 5;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = network::Model<f32>;
pub type Model64 = network::Model<f64>;
pub type FoldedModel32 = quantize::FoldedModel<f32>;
pub type Adadelta32 = training::AdadeltaState<f32>;

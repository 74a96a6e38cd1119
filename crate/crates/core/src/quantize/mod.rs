//! Post-training full-integer quantization.
//!
//! The float model is first folded (batch norm absorbed into the preceding
//! convolution or dense layer), then calibrated on representative inputs,
//! then converted to int8 weights, int32 biases and fixed-point requantization
//! multipliers.

mod calibrate;
mod fold;
mod qmodel;
mod qparams;
mod requant;

pub use calibrate::{calibrate, CalibrationRanges};
pub use fold::{fold_batchnorm, fold_model, ChannelClamp, FoldedLayer, FoldedModel, LinearKind};
pub use qmodel::{quantize_model, IntKernel, QLayer, QLinear, QModel};
pub use qparams::{
    activation_params, dequantize, quantize_per_channel, quantize_tensor, quantize_value, QuantParams,
    DEGENERATE_RANGE_PAD,
};
pub use requant::{decompose_multiplier, requant_multiplier, requantize};

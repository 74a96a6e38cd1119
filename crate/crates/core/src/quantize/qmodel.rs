use std::path::Path;

use super::calibrate::CalibrationRanges;
use super::fold::{fold_model, ChannelClamp, FoldedLayer, FoldedModel, LinearKind};
use super::qparams::{activation_params, quantize_per_channel, quantize_value, QuantParams};
use super::requant::requant_multiplier;
use crate::container::{Container, Data, Entry, QuantRecord};
use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig};
use crate::scalar::{round_half_away, Scalar};

/// Integer-only parameters of a quantized convolution or dense layer. This is
/// everything the integer kernels see; it holds no floating-point values.
#[derive(Clone, Debug, PartialEq)]
pub struct IntKernel {
    pub kind: LinearKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Same layout as the float weights, output channel innermost.
    pub weight: Vec<i8>,
    pub bias: Vec<i32>,
    pub m0: Vec<i32>,
    pub shift: Vec<i32>,
    pub input_zero_point: i32,
    pub output_zero_point: i32,
    pub clamp_lo: Vec<i8>,
    pub clamp_hi: Vec<i8>,
}

impl IntKernel {
    /// Number of products summed into one accumulator.
    pub fn terms(&self) -> usize {
        match self.kind {
            LinearKind::Conv3x3 => 9 * self.in_channels,
            LinearKind::Dense => self.in_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QLinear {
    pub kernel: IntKernel,
    pub input: QuantParams,
    pub output: QuantParams,
    /// Per output channel; zero point always 0.
    pub weight_params: Vec<QuantParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QLayer {
    Linear(QLinear),
    MaxPool,
    Flatten,
}

/// Calibrated full-integer model.
#[derive(Clone, Debug, PartialEq)]
pub struct QModel {
    pub config: ModelConfig,
    pub input: QuantParams,
    pub layers: Vec<QLayer>,
    /// Parameters of the final (logit) tensor.
    pub output: QuantParams,
}

fn quantize_linear<T: Scalar>(
    layer_index: usize,
    kind: LinearKind,
    in_channels: usize,
    out_channels: usize,
    weight: &[T],
    bias: &[T],
    clamp: &[ChannelClamp<T>],
    input: QuantParams,
    output: QuantParams,
) -> Result<QLinear> {
    let w: Vec<f64> = weight.iter().map(|v| v.to_f64_lossless()).collect();
    let (qw, weight_params) = quantize_per_channel(&w, out_channels)?;
    let s_in = input.scale();
    let s_out = output.scale();
    let mut qb = Vec::with_capacity(out_channels);
    let mut m0 = Vec::with_capacity(out_channels);
    let mut shift = Vec::with_capacity(out_channels);
    for c in 0..out_channels {
        let s_w = weight_params[c].scale();
        let b = round_half_away(bias[c].to_f64_lossless() / (s_in * s_w));
        if b.abs() >= (1u64 << 30) as f64 {
            return Err(Error::InvalidModel(format!(
                "layer {} channel {}: quantized bias {} does not fit the accumulator",
                layer_index, c, b
            )));
        }
        qb.push(b as i32);
        let (m, s) = requant_multiplier(s_in, s_w, s_out)?;
        m0.push(m);
        shift.push(s);
    }
    let (clamp_lo, clamp_hi) = clamp
        .iter()
        .map(|c| match *c {
            ChannelClamp::None => (-128, 127),
            ChannelClamp::Floor(b) => (quantize_value(b.to_f64_lossless(), &output), 127),
            ChannelClamp::Ceil(b) => (-128, quantize_value(b.to_f64_lossless(), &output)),
        })
        .unzip();
    let kernel = IntKernel {
        kind,
        in_channels,
        out_channels,
        weight: qw,
        bias: qb,
        m0,
        shift,
        input_zero_point: input.zero_point(),
        output_zero_point: output.zero_point(),
        clamp_lo,
        clamp_hi,
    };
    check_accumulator(layer_index, &kernel)?;
    Ok(QLinear {
        kernel,
        input,
        output,
        weight_params,
    })
}

/// Worst case `|sum (q_in - zp_in) * q_w + bias|` must fit in i32.
fn check_accumulator(layer_index: usize, k: &IntKernel) -> Result<()> {
    let max_bias = k.bias.iter().map(|b| b.unsigned_abs() as u64).max().unwrap_or(0);
    let bound = k.terms() as u64 * 255 * 128 + max_bias;
    if bound >= 1u64 << 31 {
        return Err(Error::InvalidModel(format!(
            "layer {}: accumulator bound {} overflows int32",
            layer_index, bound
        )));
    }
    Ok(())
}

/// Converts a folded, calibrated float model into a [`QModel`].
pub fn quantize_model<T: Scalar>(model: &FoldedModel<T>, ranges: &CalibrationRanges) -> Result<QModel> {
    if ranges.ranges.len() != model.layers.len() + 1 {
        return Err(Error::InvalidCalibration(format!(
            "{} ranges for {} activation tensors",
            ranges.ranges.len(),
            model.layers.len() + 1
        )));
    }
    let params = |i: usize| -> Result<QuantParams> {
        let (lo, hi) = ranges.ranges[i];
        activation_params(lo, hi).map_err(|e| Error::InvalidCalibration(format!("tensor {}: {}", i, e)))
    };
    let input = params(0)?;
    let mut cur = input;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, l) in model.layers.iter().enumerate() {
        layers.push(match l {
            FoldedLayer::Linear {
                kind,
                in_channels,
                out_channels,
                weight,
                bias,
                clamp,
            } => {
                let out = params(i + 1)?;
                let q = quantize_linear(
                    i,
                    *kind,
                    *in_channels,
                    *out_channels,
                    weight,
                    bias,
                    clamp,
                    cur,
                    out,
                )?;
                cur = out;
                QLayer::Linear(q)
            }
            FoldedLayer::MaxPool => QLayer::MaxPool,
            FoldedLayer::Flatten => QLayer::Flatten,
        });
    }
    Ok(QModel {
        config: model.config.clone(),
        input,
        layers,
        output: cur,
    })
}

fn record(q: &QuantParams) -> QuantRecord {
    QuantRecord {
        scale: q.scale(),
        zero_point: q.zero_point(),
    }
}

fn params_of(e: &Entry) -> Result<Vec<QuantParams>> {
    e.quant
        .iter()
        .map(|r| QuantParams::new(r.scale, r.zero_point))
        .collect::<Result<_>>()
        .map_err(|err| Error::Format(format!("entry `{}`: {}", e.name, err)))
}

fn act_entry(name: String, q: &QuantParams) -> Entry {
    Entry::new(name, vec![0], Data::I8(vec![])).with_quant(vec![record(q)])
}

fn single_params(c: &Container, name: &str) -> Result<QuantParams> {
    let p = params_of(c.entry(name)?)?;
    p.first()
        .copied()
        .filter(|_| p.len() == 1)
        .ok_or_else(|| Error::Format(format!("entry `{}` needs one quantization record", name)))
}

impl QModel {
    pub fn to_container(&self) -> Container {
        let mut entries = vec![act_entry("input".into(), &self.input)];
        for (i, l) in self.layers.iter().enumerate() {
            let QLayer::Linear(q) = l else { continue };
            let k = &q.kernel;
            let wshape = match k.kind {
                LinearKind::Conv3x3 => vec![3, 3, k.in_channels, k.out_channels],
                LinearKind::Dense => vec![k.in_channels, k.out_channels],
            };
            let s_in = q.input.scale();
            entries.push(
                Entry::new(format!("{}.weight", i), wshape, Data::I8(k.weight.clone()))
                    .with_quant(q.weight_params.iter().map(record).collect()),
            );
            entries.push(
                Entry::new(format!("{}.bias", i), vec![k.out_channels], Data::I32(k.bias.clone()))
                    .with_quant(
                        q.weight_params
                            .iter()
                            .map(|w| QuantRecord {
                                scale: s_in * w.scale(),
                                zero_point: 0,
                            })
                            .collect(),
                    ),
            );
            entries.push(Entry::new(
                format!("{}.requant.m0", i),
                vec![k.out_channels],
                Data::I32(k.m0.clone()),
            ));
            entries.push(Entry::new(
                format!("{}.requant.shift", i),
                vec![k.out_channels],
                Data::I32(k.shift.clone()),
            ));
            let mut bounds = k.clamp_lo.clone();
            bounds.extend(&k.clamp_hi);
            entries.push(Entry::new(
                format!("{}.clamp", i),
                vec![2, k.out_channels],
                Data::I8(bounds),
            ));
            entries.push(act_entry(format!("{}.act_out", i), &q.output));
        }
        Container {
            format: "int8".into(),
            arch: self.config.to_text(),
            entries,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.format != "int8" {
            return Err(Error::Format(format!("expected an int8 container, found `{}`", c.format)));
        }
        let config = ModelConfig::from_text(&c.arch)?;
        let layout = fold_model(&Model::<f32>::zeros(config.clone())?)?;
        let input = single_params(c, "input")?;
        let mut cur = input;
        let mut layers = Vec::with_capacity(layout.layers.len());
        for (i, l) in layout.layers.iter().enumerate() {
            layers.push(match l {
                FoldedLayer::MaxPool => QLayer::MaxPool,
                FoldedLayer::Flatten => QLayer::Flatten,
                FoldedLayer::Linear {
                    kind,
                    in_channels,
                    out_channels,
                    weight,
                    ..
                } => {
                    let oc = *out_channels;
                    let get_i8 = |name: String, len: usize| -> Result<Vec<i8>> {
                        match &c.entry(&name)?.data {
                            Data::I8(v) if v.len() == len => Ok(v.clone()),
                            _ => Err(Error::Format(format!("entry `{}` must be {} int8 values", name, len))),
                        }
                    };
                    let get_i32 = |name: String| -> Result<Vec<i32>> {
                        match &c.entry(&name)?.data {
                            Data::I32(v) if v.len() == oc => Ok(v.clone()),
                            _ => Err(Error::Format(format!("entry `{}` must be {} int32 values", name, oc))),
                        }
                    };
                    let wq = get_i8(format!("{}.weight", i), weight.len())?;
                    let weight_params = params_of(c.entry(&format!("{}.weight", i))?)?;
                    if weight_params.len() != oc || weight_params.iter().any(|p| p.zero_point() != 0) {
                        return Err(Error::Format(format!("layer {}: bad weight quantization records", i)));
                    }
                    let bounds = get_i8(format!("{}.clamp", i), 2 * oc)?;
                    let output = single_params(c, &format!("{}.act_out", i))?;
                    let kernel = IntKernel {
                        kind: *kind,
                        in_channels: *in_channels,
                        out_channels: oc,
                        weight: wq,
                        bias: get_i32(format!("{}.bias", i))?,
                        m0: get_i32(format!("{}.requant.m0", i))?,
                        shift: get_i32(format!("{}.requant.shift", i))?,
                        input_zero_point: cur.zero_point(),
                        output_zero_point: output.zero_point(),
                        clamp_lo: bounds[..oc].to_vec(),
                        clamp_hi: bounds[oc..].to_vec(),
                    };
                    check_accumulator(i, &kernel)?;
                    let q = QLinear {
                        kernel,
                        input: cur,
                        output,
                        weight_params,
                    };
                    cur = output;
                    QLayer::Linear(q)
                }
            });
        }
        Ok(QModel {
            config,
            input,
            layers,
            output: cur,
        })
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        QModel::from_container(&Container::load(path)?)
    }

    /// Serialized container size in bytes.
    pub fn serialized_size(&self) -> usize {
        self.to_container().to_bytes().map(|b| b.len()).unwrap_or(0)
    }

    pub fn linear_layers(&self) -> impl Iterator<Item = &QLinear> {
        self.layers.iter().filter_map(|l| match l {
            QLayer::Linear(q) => Some(q),
            _ => None,
        })
    }
}

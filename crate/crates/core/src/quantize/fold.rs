use crate::error::{Error, Result};
use crate::network::layers::{self, argmax};
use crate::network::{Layer, Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinearKind {
    Conv3x3,
    Dense,
}

/// Per-channel output activation of a folded layer.
///
/// A batch norm that follows a ReLU is an affine map `a * relu(z) + b`.
/// Folding `a` into the weights turns it into `max(z', b)` when `a >= 0`
/// and `min(z', b)` when `a < 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChannelClamp<T> {
    None,
    Floor(T),
    Ceil(T),
}

impl<T: Scalar> ChannelClamp<T> {
    #[inline]
    pub fn apply(&self, v: T) -> T {
        match *self {
            ChannelClamp::None => v,
            ChannelClamp::Floor(b) => v.max(b),
            ChannelClamp::Ceil(b) => v.min(b),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FoldedLayer<T> {
    Linear {
        kind: LinearKind,
        in_channels: usize,
        out_channels: usize,
        weight: Vec<T>,
        bias: Vec<T>,
        clamp: Vec<ChannelClamp<T>>,
    },
    MaxPool,
    Flatten,
}

/// Inference-only model with batch norm absorbed and dropout removed. The
/// output is pre-softmax logits.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedModel<T> {
    pub config: ModelConfig,
    pub layers: Vec<FoldedLayer<T>>,
}

/// Absorbs a batch norm `(gamma, beta, mean, var)` into the preceding
/// linear layer whose output channel is the innermost weight axis.
///
/// Returns `(w', b', bound)` with `w' = w * a`, `b' = (b - mean) * a + beta`
/// and `bound = beta - a * mean`, where `a = gamma / sqrt(var + eps)`. The
/// bound is the batch-norm image of a zero pre-activation, needed when a ReLU
/// sits between the layer and the batch norm.
#[allow(clippy::type_complexity)]
pub fn fold_batchnorm<T: Scalar>(
    weight: &[T],
    bias: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<(Vec<T>, Vec<T>, Vec<T>, Vec<T>)> {
    let c = bias.len();
    if [gamma.len(), beta.len(), mean.len(), var.len()] != [c; 4] || weight.len() % c.max(1) != 0 {
        return Err(Error::InvalidModel("batch norm does not match the layer width".into()));
    }
    let mut a = Vec::with_capacity(c);
    for i in 0..c {
        let d = var[i] + eps;
        if !(d > T::zero()) {
            return Err(Error::InvalidModel(format!(
                "channel {}: var + eps = {} is not positive",
                i, d
            )));
        }
        a.push(gamma[i] / d.sqrt());
    }
    let w: Vec<T> = weight
        .iter()
        .enumerate()
        .map(|(j, &v)| v * a[j % c])
        .collect();
    let b = (0..c).map(|i| (bias[i] - mean[i]) * a[i] + beta[i]).collect();
    let bound = (0..c).map(|i| beta[i] - a[i] * mean[i]).collect();
    Ok((w, b, bound, a))
}

/// Folds every `linear [relu] [batchnorm] [relu]` run of a model.
pub fn fold_model<T: Scalar>(model: &Model<T>) -> Result<FoldedModel<T>> {
    let eps = T::of(model.config().bn_epsilon);
    let src = model.layers();
    let mut out = Vec::new();
    let mut i = 0;
    let unsupported = |i: usize| {
        Error::InvalidModel(format!("layer {} cannot be folded in this position", i))
    };
    while i < src.len() {
        match &src[i] {
            Layer::Conv2d(_) | Layer::Dense(_) => {
                let (kind, in_c, out_c, mut weight, mut bias) = match &src[i] {
                    Layer::Conv2d(c) => (
                        LinearKind::Conv3x3,
                        c.in_channels,
                        c.out_channels,
                        c.weight.clone(),
                        c.bias.clone(),
                    ),
                    Layer::Dense(d) => (
                        LinearKind::Dense,
                        d.in_units,
                        d.out_units,
                        d.weight.clone(),
                        d.bias.clone(),
                    ),
                    _ => unreachable!(),
                };
                let mut clamp = vec![ChannelClamp::None; out_c];
                i += 1;
                let mut relu = false;
                if matches!(src.get(i), Some(Layer::Relu)) {
                    relu = true;
                    clamp = vec![ChannelClamp::Floor(T::zero()); out_c];
                    i += 1;
                }
                if let Some(Layer::BatchNorm(bn)) = src.get(i) {
                    let (w, b, bound, a) = fold_batchnorm(
                        &weight,
                        &bias,
                        &bn.gamma,
                        &bn.beta,
                        &bn.moving_mean,
                        &bn.moving_var,
                        eps,
                    )?;
                    weight = w;
                    bias = b;
                    if relu {
                        clamp = (0..out_c)
                            .map(|c| {
                                if a[c] >= T::zero() {
                                    ChannelClamp::Floor(bound[c])
                                } else {
                                    ChannelClamp::Ceil(bound[c])
                                }
                            })
                            .collect();
                    }
                    i += 1;
                    if !relu && matches!(src.get(i), Some(Layer::Relu)) {
                        clamp = vec![ChannelClamp::Floor(T::zero()); out_c];
                        i += 1;
                    }
                }
                out.push(FoldedLayer::Linear {
                    kind,
                    in_channels: in_c,
                    out_channels: out_c,
                    weight,
                    bias,
                    clamp,
                });
            }
            Layer::MaxPool => {
                out.push(FoldedLayer::MaxPool);
                i += 1;
            }
            Layer::Flatten => {
                out.push(FoldedLayer::Flatten);
                i += 1;
            }
            Layer::Dropout(_) => i += 1,
            Layer::Softmax if i + 1 == src.len() => i += 1,
            _ => return Err(unsupported(i)),
        }
    }
    Ok(FoldedModel {
        config: model.config().clone(),
        layers: out,
    })
}

impl<T: Scalar> FoldedModel<T> {
    /// Inference forward pass; returns every intermediate activation, the
    /// input first and the logits last.
    pub fn activations(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        crate::network::check_input(&self.config, x.shape())?;
        let mut acts = vec![x.clone()];
        for l in &self.layers {
            let cur = acts.last().expect("input present");
            let next = match l {
                FoldedLayer::Linear {
                    kind,
                    out_channels,
                    weight,
                    bias,
                    clamp,
                    ..
                } => {
                    let mut y = match kind {
                        LinearKind::Conv3x3 => layers::conv2d_fwd(cur, weight, bias, *out_channels)?,
                        LinearKind::Dense => layers::dense_fwd(cur, weight, bias, *out_channels)?,
                    };
                    for px in y.data_mut().chunks_mut(*out_channels) {
                        for (v, c) in px.iter_mut().zip(clamp) {
                            *v = c.apply(*v);
                        }
                    }
                    y
                }
                FoldedLayer::MaxPool => layers::maxpool_fwd(cur)?.0,
                FoldedLayer::Flatten => {
                    let n = cur.shape()[0];
                    Tensor::from_vec(&[n, cur.len() / n], cur.data().to_vec())?
                }
            };
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.activations(x)?.pop().expect("non-empty"))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let l = self.logits(x)?;
        let k = self.config.num_classes;
        Ok(l.data().chunks(k).map(argmax).collect())
    }
}

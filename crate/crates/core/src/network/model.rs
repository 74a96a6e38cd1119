use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{check_input, LayerSpec, ModelConfig, Shape};
use super::layers::{self, BatchStats};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(3, 3, in, out)`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub in_units: usize,
    pub out_units: usize,
    /// `(in, out)`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub moving_mean: Vec<T>,
    pub moving_var: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    Relu,
    BatchNorm(BatchNorm<T>),
    MaxPool,
    Flatten,
    Dense(Dense<T>),
    Dropout(f64),
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-layer state kept by a training forward pass.
pub enum LayerAux<T> {
    None,
    BatchNorm(BatchStats<T>),
    MaxPool(Vec<usize>),
    Dropout(Vec<T>),
}

/// Activations retained by a training-mode forward pass for backprop.
pub struct ForwardCache<T> {
    /// Input of every layer, in order.
    pub inputs: Vec<Tensor<T>>,
    pub aux: Vec<LayerAux<T>>,
    pub probs: Tensor<T>,
}

/// Architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Model<T> {
    /// Builds a model with every parameter produced by `init(kind, fan_in, len)`.
    fn build(config: ModelConfig, mut init: impl FnMut(&str, usize, usize) -> Vec<T>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes()?;
        let mut prev = config.input_shape();
        let mut out = Vec::with_capacity(config.layers.len());
        for (spec, shape) in config.layers.iter().zip(&shapes) {
            let layer = match (spec, prev) {
                (LayerSpec::Conv2d { out_channels }, Shape::Spatial { c, .. }) => {
                    let oc = *out_channels;
                    Layer::Conv2d(Conv2d {
                        in_channels: c,
                        out_channels: oc,
                        weight: init("weight", 9 * c, 9 * c * oc),
                        bias: vec![T::zero(); oc],
                    })
                }
                (LayerSpec::Dense { units }, Shape::Flat(n)) => Layer::Dense(Dense {
                    in_units: n,
                    out_units: *units,
                    weight: init("weight", n, n * units),
                    bias: vec![T::zero(); *units],
                }),
                (LayerSpec::BatchNorm, s) => {
                    let c = match s {
                        Shape::Spatial { c, .. } => c,
                        Shape::Flat(n) => n,
                    };
                    Layer::BatchNorm(BatchNorm {
                        gamma: vec![T::one(); c],
                        beta: vec![T::zero(); c],
                        moving_mean: vec![T::zero(); c],
                        moving_var: vec![T::one(); c],
                    })
                }
                (LayerSpec::Relu, _) => Layer::Relu,
                (LayerSpec::MaxPool, _) => Layer::MaxPool,
                (LayerSpec::Flatten, _) => Layer::Flatten,
                (LayerSpec::Dropout { rate }, _) => Layer::Dropout(*rate),
                (LayerSpec::Softmax, _) => Layer::Softmax,
                _ => unreachable!("validated by config.shapes"),
            };
            out.push(layer);
            prev = *shape;
        }
        Ok(Model {
            config,
            layers: out,
        })
    }

    /// He-uniform weights, zero biases, unit batch-norm scale.
    pub fn he_uniform(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::build(config, |_, fan_in, len| {
            let limit = (6.0 / fan_in as f64).sqrt();
            (0..len)
                .map(|_| T::of(rng.random_range(-limit..limit)))
                .collect()
        })
    }

    /// All weights and biases zero, batch norm at its identity-like default.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        Model::build(config, |_, _, len| vec![T::zero(); len])
    }

    /// Reassembles a model from its architecture and layers.
    pub fn from_layers(config: ModelConfig, layers: Vec<Layer<T>>) -> Result<Self> {
        let template = Model::<T>::zeros(config.clone())?;
        if template.layers.len() != layers.len() {
            return Err(Error::InvalidModel("layer count mismatch".into()));
        }
        for (i, (a, b)) in template.layers.iter().zip(&layers).enumerate() {
            let ok = match (a, b) {
                (Layer::Conv2d(a), Layer::Conv2d(b)) => {
                    a.in_channels == b.in_channels
                        && a.out_channels == b.out_channels
                        && a.weight.len() == b.weight.len()
                        && a.bias.len() == b.bias.len()
                }
                (Layer::Dense(a), Layer::Dense(b)) => {
                    a.in_units == b.in_units
                        && a.out_units == b.out_units
                        && a.weight.len() == b.weight.len()
                        && a.bias.len() == b.bias.len()
                }
                (Layer::BatchNorm(a), Layer::BatchNorm(b)) => {
                    a.gamma.len() == b.gamma.len()
                        && b.beta.len() == a.gamma.len()
                        && b.moving_mean.len() == a.gamma.len()
                        && b.moving_var.len() == a.gamma.len()
                        && b.moving_var.iter().all(|v| *v >= T::zero())
                }
                (Layer::Dropout(a), Layer::Dropout(b)) => a == b,
                (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
            };
            if !ok {
                return Err(Error::InvalidModel(format!("layer {} does not match the architecture", i)));
            }
        }
        Ok(Model { config, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let v = |x: &Vec<T>| x.iter().map(|&a| U::of(a.to_f64_lossless())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    weight: v(&c.weight),
                    bias: v(&c.bias),
                }),
                Layer::Dense(d) => Layer::Dense(Dense {
                    in_units: d.in_units,
                    out_units: d.out_units,
                    weight: v(&d.weight),
                    bias: v(&d.bias),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    gamma: v(&b.gamma),
                    beta: v(&b.beta),
                    moving_mean: v(&b.moving_mean),
                    moving_var: v(&b.moving_var),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool => Layer::MaxPool,
                Layer::Flatten => Layer::Flatten,
                Layer::Dropout(r) => Layer::Dropout(*r),
                Layer::Softmax => Layer::Softmax,
            })
            .collect();
        Model {
            config: self.config.clone(),
            layers,
        }
    }

    pub fn param_count(&self) -> usize {
        self.state().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// Trainable parameters (weights, biases, batch-norm scale and shift)
    /// with stable names.
    pub fn params(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Conv2d(c) => {
                    out.push((format!("{}.conv.weight", i), &c.weight[..]));
                    out.push((format!("{}.conv.bias", i), &c.bias[..]));
                }
                Layer::Dense(d) => {
                    out.push((format!("{}.dense.weight", i), &d.weight[..]));
                    out.push((format!("{}.dense.bias", i), &d.bias[..]));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("{}.bn.gamma", i), &b.gamma[..]));
                    out.push((format!("{}.bn.beta", i), &b.beta[..]));
                }
                _ => {}
            }
        }
        out
    }

    /// Mutable view of the same parameters, in the same order as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in self.layers.iter_mut() {
            match l {
                Layer::Conv2d(c) => {
                    out.push(&mut c.weight);
                    out.push(&mut c.bias);
                }
                Layer::Dense(d) => {
                    out.push(&mut d.weight);
                    out.push(&mut d.bias);
                }
                Layer::BatchNorm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                _ => {}
            }
        }
        out
    }

    /// Every stored tensor (trainable and moving statistics) as
    /// `(name, shape, values)`.
    pub fn state(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Conv2d(c) => {
                    out.push((
                        format!("{}.conv.weight", i),
                        vec![3, 3, c.in_channels, c.out_channels],
                        &c.weight[..],
                    ));
                    out.push((format!("{}.conv.bias", i), vec![c.out_channels], &c.bias[..]));
                }
                Layer::Dense(d) => {
                    out.push((
                        format!("{}.dense.weight", i),
                        vec![d.in_units, d.out_units],
                        &d.weight[..],
                    ));
                    out.push((format!("{}.dense.bias", i), vec![d.out_units], &d.bias[..]));
                }
                Layer::BatchNorm(b) => {
                    let c = vec![b.gamma.len()];
                    out.push((format!("{}.bn.gamma", i), c.clone(), &b.gamma[..]));
                    out.push((format!("{}.bn.beta", i), c.clone(), &b.beta[..]));
                    out.push((format!("{}.bn.moving_mean", i), c.clone(), &b.moving_mean[..]));
                    out.push((format!("{}.bn.moving_var", i), c, &b.moving_var[..]));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrites the stored tensor called `name`.
    pub fn set_state(&mut self, name: &str, values: &[T]) -> Result<()> {
        let (idx, field) = name
            .split_once('.')
            .and_then(|(i, f)| Some((i.parse::<usize>().ok()?, f)))
            .ok_or_else(|| Error::Format(format!("bad tensor name `{}`", name)))?;
        let target: &mut Vec<T> = match (self.layers.get_mut(idx), field) {
            (Some(Layer::Conv2d(c)), "conv.weight") => &mut c.weight,
            (Some(Layer::Conv2d(c)), "conv.bias") => &mut c.bias,
            (Some(Layer::Dense(d)), "dense.weight") => &mut d.weight,
            (Some(Layer::Dense(d)), "dense.bias") => &mut d.bias,
            (Some(Layer::BatchNorm(b)), "bn.gamma") => &mut b.gamma,
            (Some(Layer::BatchNorm(b)), "bn.beta") => &mut b.beta,
            (Some(Layer::BatchNorm(b)), "bn.moving_mean") => &mut b.moving_mean,
            (Some(Layer::BatchNorm(b)), "bn.moving_var") => &mut b.moving_var,
            _ => return Err(Error::Format(format!("no tensor `{}` in this architecture", name))),
        };
        if target.len() != values.len() {
            return Err(Error::Format(format!(
                "tensor `{}` has {} values, expected {}",
                name,
                values.len(),
                target.len()
            )));
        }
        target.copy_from_slice(values);
        Ok(())
    }

    fn eps(&self) -> T {
        T::of(self.config.bn_epsilon)
    }

    fn check_batch(&self, x: &Tensor<T>) -> Result<()> {
        check_input(&self.config, x.shape())?;
        if !x.all_finite() {
            return invalid("input contains non-finite values");
        }
        Ok(())
    }

    fn infer_layer(&self, layer: &Layer<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        Ok(match layer {
            Layer::Conv2d(c) => layers::conv2d_fwd(&x, &c.weight, &c.bias, c.out_channels)?,
            Layer::Relu => layers::relu_fwd(&x),
            Layer::BatchNorm(b) => layers::batchnorm_fwd(
                &x,
                &b.gamma,
                &b.beta,
                &b.moving_mean,
                &b.moving_var,
                self.eps(),
            )?,
            Layer::MaxPool => layers::maxpool_fwd(&x)?.0,
            Layer::Flatten => {
                let n = x.shape()[0];
                let f = x.len() / n;
                x.reshape_unchecked(&[n, f])
            }
            Layer::Dense(d) => layers::dense_fwd(&x, &d.weight, &d.bias, d.out_units)?,
            Layer::Dropout(_) => x,
            Layer::Softmax => layers::softmax_fwd(&x),
        })
    }

    /// Inference-mode pre-softmax outputs, shape `(N, classes)`.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut cur = x.clone();
        for l in self.layers.iter().filter(|l| !matches!(l, Layer::Softmax)) {
            cur = self.infer_layer(l, cur)?;
        }
        Ok(cur)
    }

    /// Inference-mode class probabilities, shape `(N, classes)`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut cur = x.clone();
        for l in &self.layers {
            cur = self.infer_layer(l, cur)?;
        }
        Ok(cur)
    }

    /// Training-mode forward pass: batch statistics in batch norm, inverted
    /// dropout. The model itself is not modified.
    pub fn forward_train<R: RngCore + ?Sized>(
        &self,
        x: &Tensor<T>,
        rng: &mut R,
    ) -> Result<ForwardCache<T>> {
        self.check_batch(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (next, a) = match l {
                Layer::BatchNorm(b) => {
                    let (y, stats) = layers::batchnorm_train(&cur, &b.gamma, &b.beta, self.eps())?;
                    (y, LayerAux::BatchNorm(stats))
                }
                Layer::MaxPool => {
                    let (y, arg) = layers::maxpool_fwd(&cur)?;
                    (y, LayerAux::MaxPool(arg))
                }
                Layer::Dropout(rate) if *rate > 0.0 => {
                    let (y, mask) = layers::dropout_fwd(&cur, *rate, rng);
                    (y, LayerAux::Dropout(mask))
                }
                other => (self.infer_layer(other, cur.clone())?, LayerAux::None),
            };
            inputs.push(std::mem::replace(&mut cur, next));
            aux.push(a);
        }
        Ok(ForwardCache {
            inputs,
            aux,
            probs: cur,
        })
    }

    /// Mode-dispatching forward pass. `rng` is required exactly in training mode.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        match (mode, rng) {
            (Mode::Infer, None) => Ok((self.infer(x)?, None)),
            (Mode::Train, Some(rng)) => {
                let cache = self.forward_train(x, rng)?;
                Ok((cache.probs.clone(), Some(cache)))
            }
            (Mode::Train, None) => invalid("training-mode forward needs a random stream"),
            (Mode::Infer, Some(_)) => invalid("inference-mode forward takes no random stream"),
        }
    }

    /// Folds the batch statistics of a training pass into the moving averages.
    pub fn update_moving_stats(&mut self, cache: &ForwardCache<T>) {
        let m = T::of(self.config.bn_momentum);
        for (l, a) in self.layers.iter_mut().zip(&cache.aux) {
            if let (Layer::BatchNorm(b), LayerAux::BatchNorm(s)) = (l, a) {
                for i in 0..b.gamma.len() {
                    b.moving_mean[i] = m * b.moving_mean[i] + (T::one() - m) * s.mean[i];
                    b.moving_var[i] = m * b.moving_var[i] + (T::one() - m) * s.var[i];
                }
            }
        }
    }
}

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};

/// One layer of the sequential architecture.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero "same" padding.
    Conv2d { out_channels: usize },
    Relu,
    BatchNorm,
    /// 2x2 max pooling, stride 2.
    MaxPool,
    Flatten,
    Dense { units: usize },
    Dropout { rate: f64 },
    Softmax,
}

/// Activation shape of a single sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Spatial { h: usize, w: usize, c: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Spatial { h, w, c } => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    /// Tensor shape for a batch of `n` samples.
    pub fn batched(&self, n: usize) -> Vec<usize> {
        match *self {
            Shape::Spatial { h, w, c } => vec![n, h, w, c],
            Shape::Flat(f) => vec![n, f],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
    pub input_side: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Conv-ReLU-BN blocks with channel counts `channels`, 2x2 max pooling
    /// after the first `pooled_blocks` blocks, then flatten, dropout, a hidden
    /// dense layer with ReLU, dropout and the classifier.
    pub fn conv_net(
        input_side: usize,
        channels: &[usize],
        pooled_blocks: usize,
        hidden_units: usize,
        num_classes: usize,
        dropout: f64,
    ) -> Self {
        let mut layers = Vec::new();
        for (i, &c) in channels.iter().enumerate() {
            layers.push(LayerSpec::Conv2d { out_channels: c });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::BatchNorm);
            if i < pooled_blocks {
                layers.push(LayerSpec::MaxPool);
            }
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dropout { rate: dropout },
            LayerSpec::Dense { units: hidden_units },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: dropout },
            LayerSpec::Dense { units: num_classes },
            LayerSpec::Softmax,
        ]);
        ModelConfig {
            layers,
            input_side,
            input_channels: 1,
            num_classes,
            bn_epsilon: 1e-3,
            bn_momentum: 0.99,
        }
    }

    /// The deployment architecture: seven blocks of (16, 32, 64, 128, 128,
    /// 128, 128) channels on 256x256 input, pooling after the first six,
    /// a 2048 -> 2560 hidden layer and a five-way classifier.
    pub fn default_config() -> Self {
        ModelConfig::conv_net(256, &[16, 32, 64, 128, 128, 128, 128], 6, 2560, 5, 0.5)
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Spatial {
            h: self.input_side,
            w: self.input_side,
            c: self.input_channels,
        }
    }

    /// Output shape of every layer, validating that the sequence chains.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let bad = |what: &str| -> Error {
                Error::InvalidModel(format!("layer {} ({:?}): {} on {:?}", i, l, what, cur))
            };
            cur = match (l, cur) {
                (LayerSpec::Conv2d { out_channels }, Shape::Spatial { h, w, .. }) => {
                    if *out_channels == 0 {
                        return Err(bad("zero output channels"));
                    }
                    Shape::Spatial {
                        h,
                        w,
                        c: *out_channels,
                    }
                }
                (LayerSpec::MaxPool, Shape::Spatial { h, w, c }) => {
                    if h < 2 || w < 2 {
                        return Err(bad("pooling needs at least 2x2"));
                    }
                    Shape::Spatial {
                        h: h / 2,
                        w: w / 2,
                        c,
                    }
                }
                (LayerSpec::Flatten, s) => Shape::Flat(s.numel()),
                (LayerSpec::Dense { units }, Shape::Flat(_)) => {
                    if *units == 0 {
                        return Err(bad("zero units"));
                    }
                    Shape::Flat(*units)
                }
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(bad("dropout rate outside [0, 1)"));
                    }
                    s
                }
                (LayerSpec::Relu | LayerSpec::BatchNorm | LayerSpec::Softmax, s) => s,
                _ => return Err(bad("incompatible input shape")),
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || self.input_channels == 0 || self.num_classes == 0 {
            return Err(Error::InvalidModel("dimensions must be positive".into()));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidModel("bad batch-norm hyperparameters".into()));
        }
        let shapes = self.shapes()?;
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::InvalidModel("the final layer must be softmax".into()));
        }
        if shapes.last() != Some(&Shape::Flat(self.num_classes)) {
            return Err(Error::InvalidModel(format!(
                "output shape {:?} is not {} classes",
                shapes.last(),
                self.num_classes
            )));
        }
        if self.layers[..self.layers.len() - 1].contains(&LayerSpec::Softmax) {
            return Err(Error::InvalidModel("softmax only allowed last".into()));
        }
        Ok(())
    }

    pub fn conv_block_count(&self) -> usize {
        self.layers
            .windows(3)
            .filter(|w| {
                matches!(
                    w,
                    [LayerSpec::Conv2d { .. }, LayerSpec::Relu, LayerSpec::BatchNorm]
                )
            })
            .count()
    }

    /// Number of stored parameters, batch-norm moving statistics included.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        let mut prev = self.input_shape();
        let mut total = 0;
        for (l, s) in self.layers.iter().zip(&shapes) {
            total += match (l, prev) {
                (LayerSpec::Conv2d { out_channels }, Shape::Spatial { c, .. }) => {
                    9 * c * out_channels + out_channels
                }
                (LayerSpec::Dense { units }, Shape::Flat(n)) => n * units + units,
                (LayerSpec::BatchNorm, s) => 4 * channels_of(s),
                _ => 0,
            };
            prev = *s;
        }
        Ok(total)
    }

    /// Canonical text form, one directive per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "input_side {}", self.input_side);
        let _ = writeln!(s, "input_channels {}", self.input_channels);
        let _ = writeln!(s, "num_classes {}", self.num_classes);
        let _ = writeln!(s, "bn_epsilon {}", self.bn_epsilon);
        let _ = writeln!(s, "bn_momentum {}", self.bn_momentum);
        for l in &self.layers {
            let _ = match l {
                LayerSpec::Conv2d { out_channels } => writeln!(s, "conv2d {}", out_channels),
                LayerSpec::Relu => writeln!(s, "relu"),
                LayerSpec::BatchNorm => writeln!(s, "batchnorm"),
                LayerSpec::MaxPool => writeln!(s, "maxpool"),
                LayerSpec::Flatten => writeln!(s, "flatten"),
                LayerSpec::Dense { units } => writeln!(s, "dense {}", units),
                LayerSpec::Dropout { rate } => writeln!(s, "dropout {}", rate),
                LayerSpec::Softmax => writeln!(s, "softmax"),
            };
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig {
            layers: Vec::new(),
            input_side: 0,
            input_channels: 0,
            num_classes: 0,
            bn_epsilon: 0.0,
            bn_momentum: 0.0,
        };
        for (n, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else { continue };
            let arg = parts.next();
            let err = || Error::Format(format!("architecture line {}: `{}`", n + 1, line));
            let int = || -> Result<usize> { arg.ok_or_else(err)?.parse().map_err(|_| err()) };
            let real = || -> Result<f64> { arg.ok_or_else(err)?.parse().map_err(|_| err()) };
            match key {
                "input_side" => cfg.input_side = int()?,
                "input_channels" => cfg.input_channels = int()?,
                "num_classes" => cfg.num_classes = int()?,
                "bn_epsilon" => cfg.bn_epsilon = real()?,
                "bn_momentum" => cfg.bn_momentum = real()?,
                "conv2d" => cfg.layers.push(LayerSpec::Conv2d {
                    out_channels: int()?,
                }),
                "relu" => cfg.layers.push(LayerSpec::Relu),
                "batchnorm" => cfg.layers.push(LayerSpec::BatchNorm),
                "maxpool" => cfg.layers.push(LayerSpec::MaxPool),
                "flatten" => cfg.layers.push(LayerSpec::Flatten),
                "dense" => cfg.layers.push(LayerSpec::Dense { units: int()? }),
                "dropout" => cfg.layers.push(LayerSpec::Dropout { rate: real()? }),
                "softmax" => cfg.layers.push(LayerSpec::Softmax),
                _ => return Err(err()),
            }
            if parts.next().is_some() {
                return Err(err());
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn channels_of(s: Shape) -> usize {
    match s {
        Shape::Spatial { c, .. } => c,
        Shape::Flat(n) => n,
    }
}

pub fn check_input(cfg: &ModelConfig, shape: &[usize]) -> Result<usize> {
    match *shape {
        [n, h, w, c] if n > 0 && h == cfg.input_side && w == cfg.input_side && c == cfg.input_channels => {
            Ok(n)
        }
        _ => invalid(format!(
            "input shape {:?} does not match (N,{},{},{})",
            shape, cfg.input_side, cfg.input_side, cfg.input_channels
        )),
    }
}

use crate::error::{Error, Result};
use crate::network::layers;
use crate::network::{ForwardCache, Layer, LayerAux, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::loss::one_hot;

/// Parameter gradients, in the order of [`Model::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub names: Vec<String>,
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.values[i][..])
    }
}

/// Backpropagates softmax + cross-entropy for `labels` through the cached
/// training pass. The logit gradient is `(probs - onehot) / N`.
pub fn backward<T: Scalar>(
    model: &Model<T>,
    cache: &ForwardCache<T>,
    labels: &[usize],
) -> Result<Gradients<T>> {
    let probs = &cache.probs;
    let n = probs.shape()[0];
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a batch of {}",
            labels.len(),
            n
        )));
    }
    let k = probs.len() / n;
    if labels.iter().any(|&l| l >= k) {
        return Err(Error::InvalidArgument("label out of range".into()));
    }
    let y = one_hot::<T>(labels, k);
    let scale = T::one() / T::of(n as f64);
    let data = probs
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| (p - t) * scale)
        .collect();
    backward_from_logits(model, cache, Tensor::from_vec(probs.shape(), data)?)
}

/// Backpropagates an arbitrary gradient with respect to the pre-softmax
/// logits.
pub fn backward_from_logits<T: Scalar>(
    model: &Model<T>,
    cache: &ForwardCache<T>,
    dlogits: Tensor<T>,
) -> Result<Gradients<T>> {
    let layers = model.layers();
    if cache.inputs.len() != layers.len() || cache.aux.len() != layers.len() {
        return Err(Error::InvalidState(
            "cache does not come from a training pass of this model".into(),
        ));
    }
    if dlogits.shape() != cache.probs.shape() {
        return Err(Error::InvalidArgument("logit gradient shape mismatch".into()));
    }
    let eps = T::of(model.config().bn_epsilon);
    let stale = || Error::InvalidState("cache entries do not match the model layers".into());

    let mut per_layer: Vec<Vec<Vec<T>>> = vec![Vec::new(); layers.len()];
    let mut g = dlogits;
    let last = layers.len() - 1;
    let top = if matches!(layers[last], Layer::Softmax) {
        last
    } else {
        layers.len()
    };
    for i in (0..top).rev() {
        let x = &cache.inputs[i];
        g = match (&layers[i], &cache.aux[i]) {
            (Layer::Conv2d(c), LayerAux::None) => {
                let (dx, dw, db) = layers::conv2d_bwd(x, &c.weight, &g)?;
                per_layer[i] = vec![dw, db];
                dx
            }
            (Layer::Dense(d), LayerAux::None) => {
                let (dx, dw, db) = layers::dense_bwd(x, &d.weight, &g);
                per_layer[i] = vec![dw, db];
                dx
            }
            (Layer::BatchNorm(b), LayerAux::BatchNorm(stats)) => {
                let (dx, dgamma, dbeta) = layers::batchnorm_bwd(&g, stats, &b.gamma, eps);
                per_layer[i] = vec![dgamma, dbeta];
                dx
            }
            (Layer::Relu, LayerAux::None) => layers::relu_bwd(x, &g),
            (Layer::MaxPool, LayerAux::MaxPool(arg)) => layers::maxpool_bwd(&g, arg, x.shape()),
            (Layer::Flatten, LayerAux::None) => Tensor::from_vec(x.shape(), g.into_data())?,
            (Layer::Dropout(_), LayerAux::Dropout(mask)) => {
                let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                Tensor::from_vec(g.shape(), data)?
            }
            (Layer::Dropout(_), LayerAux::None) => g,
            _ => return Err(stale()),
        };
        if g.shape() != x.shape() {
            return Err(stale());
        }
    }

    let names = model.params().into_iter().map(|(n, _)| n).collect();
    let values = per_layer.into_iter().flatten().collect();
    Ok(Gradients { names, values })
}

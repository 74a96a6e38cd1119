use crate::error::{Error, Result};
use crate::network::Model;
use crate::scalar::Scalar;

use super::Gradients;

/// Adadelta accumulators plus an outer learning-rate multiplier.
///
/// Per element: `Eg = rho*Eg + (1-rho)*g^2`,
/// `dx = -sqrt(Ed + eps) / sqrt(Eg + eps) * g`,
/// `Ed = rho*Ed + (1-rho)*dx^2`, `x += lr * dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState<T> {
    pub names: Vec<String>,
    /// Running average of squared gradients, per parameter tensor.
    pub sq_grad: Vec<Vec<T>>,
    /// Running average of squared updates, per parameter tensor.
    pub sq_update: Vec<Vec<T>>,
    pub rho: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl<T: Scalar> AdadeltaState<T> {
    pub fn new(model: &Model<T>, lr: f64) -> Self {
        AdadeltaState::with_hyper(model, lr, 0.95, 1e-6)
    }

    pub fn with_hyper(model: &Model<T>, lr: f64, rho: f64, epsilon: f64) -> Self {
        let params = model.params();
        AdadeltaState {
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            sq_grad: params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect(),
            sq_update: params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect(),
            rho,
            epsilon,
            lr,
        }
    }

    /// Updates one flat parameter slice in place.
    pub fn update_slice(&self, x: &mut [T], g: &[T], eg: &mut [T], ed: &mut [T]) {
        let rho = T::of(self.rho);
        let keep = T::one() - rho;
        let eps = T::of(self.epsilon);
        let lr = T::of(self.lr);
        for i in 0..x.len() {
            let gi = g[i];
            eg[i] = rho * eg[i] + keep * gi * gi;
            let dx = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * gi;
            ed[i] = rho * ed[i] + keep * dx * dx;
            x[i] += lr * dx;
        }
    }

    /// Applies one step. Rejects the whole step, leaving parameters and
    /// accumulators untouched, when any gradient is non-finite.
    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.values.len() != self.sq_grad.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradient tensors for {} parameters",
                grads.values.len(),
                self.sq_grad.len()
            )));
        }
        for (i, g) in grads.values.iter().enumerate() {
            if g.len() != self.sq_grad[i].len() {
                return Err(Error::InvalidArgument(format!(
                    "gradient `{}` has {} values, expected {}",
                    self.names[i],
                    g.len(),
                    self.sq_grad[i].len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::OptimizerStepRejected {
                    param: self.names[i].clone(),
                });
            }
        }
        let mut params = model.params_mut();
        for (i, x) in params.iter_mut().enumerate() {
            let (mut eg, mut ed) = (
                std::mem::take(&mut self.sq_grad[i]),
                std::mem::take(&mut self.sq_update[i]),
            );
            self.update_slice(x, &grads.values[i], &mut eg, &mut ed);
            self.sq_grad[i] = eg;
            self.sq_update[i] = ed;
        }
        Ok(())
    }
}

use crate::error::{invalid, Result};
use crate::network::layers::argmax;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const PROB_FLOOR: f64 = 1e-12;

fn check<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    match *probs.shape() {
        [n, k] if n == labels.len() && n > 0 => {
            if let Some(bad) = labels.iter().find(|&&l| l >= k) {
                return invalid(format!("label {} out of range for {} classes", bad, k));
            }
            Ok(k)
        }
        _ => invalid(format!(
            "probabilities {:?} do not match {} labels",
            probs.shape(),
            labels.len()
        )),
    }
}

/// Mean categorical cross-entropy, accumulated in double precision.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let k = check(probs, labels)?;
    let total: f64 = probs
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &l)| -row[l].to_f64_lossless().max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let k = check(probs, labels)?;
    let hits = probs
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (row, &l) in t.data_mut().chunks_mut(classes).zip(labels) {
        row[l] = T::one();
    }
    t
}

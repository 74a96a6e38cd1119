use rayon::prelude::*;

use super::fold::FoldedModel;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Observed `(min, max)` per activation tensor of a folded model: entry 0 is
/// the network input, entry `i + 1` the output of folded layer `i`. Every
/// range contains zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRanges {
    pub ranges: Vec<(f64, f64)>,
}

impl CalibrationRanges {
    fn empty(n: usize) -> Self {
        CalibrationRanges {
            ranges: vec![(0.0, 0.0); n],
        }
    }

    /// Element-wise union. Associative and commutative.
    pub fn merge(&self, other: &CalibrationRanges) -> Result<CalibrationRanges> {
        if self.ranges.len() != other.ranges.len() {
            return invalid("cannot merge calibrations of different models");
        }
        Ok(CalibrationRanges {
            ranges: self
                .ranges
                .iter()
                .zip(&other.ranges)
                .map(|(a, b)| (a.0.min(b.0), a.1.max(b.1)))
                .collect(),
        })
    }

    fn observe<T: Scalar>(&mut self, acts: &[Tensor<T>]) {
        for (r, t) in self.ranges.iter_mut().zip(acts) {
            for &v in t.data() {
                let v = v.to_f64_lossless();
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
    }
}

/// Runs the representative samples through the folded model and records the
/// global range of every activation tensor. Inputs are normalized images,
/// so the input range always covers `[0, 1]`.
pub fn calibrate<T: Scalar>(model: &FoldedModel<T>, samples: &[Tensor<T>]) -> Result<CalibrationRanges> {
    if samples.is_empty() {
        return invalid("calibration needs at least one representative sample");
    }
    let n = model.layers.len() + 1;
    let partials = samples
        .par_iter()
        .map(|s| {
            let mut r = CalibrationRanges::empty(n);
            r.observe(&model.activations(s)?);
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = CalibrationRanges::empty(n);
    for p in &partials {
        out = out.merge(p)?;
    }
    out.ranges[0].1 = out.ranges[0].1.max(1.0);
    Ok(out)
}

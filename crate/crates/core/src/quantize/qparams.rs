use crate::error::{invalid, Result};
use crate::inference::trap;
use crate::scalar::round_half_away;

/// Half-width added on each side of a calibration range with `min == max`.
pub const DEGENERATE_RANGE_PAD: f64 = 1e-3;

/// Affine mapping `real = scale * (q - zero_point)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantParams {
    scale: f64,
    zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return invalid(format!("scale {} must be positive and finite", scale));
        }
        if !(-128..=127).contains(&zero_point) {
            return invalid(format!("zero point {} outside int8", zero_point));
        }
        Ok(QuantParams { scale, zero_point })
    }

    /// The real-valued step. Reading it inside an integer-only section trips
    /// the float trap.
    pub fn scale(&self) -> f64 {
        trap::float_access("QuantParams::scale");
        self.scale
    }

    pub fn zero_point(&self) -> i32 {
        self.zero_point
    }
}

pub fn quantize_value(v: f64, qp: &QuantParams) -> i8 {
    let q = round_half_away(v / qp.scale()) + qp.zero_point as f64;
    q.clamp(-128.0, 127.0) as i8
}

pub fn dequantize(q: i8, qp: &QuantParams) -> f64 {
    qp.scale() * (q as i32 - qp.zero_point) as f64
}

/// Asymmetric per-tensor parameters for an observed activation range. The
/// range is widened to contain zero; an empty range is padded by
/// [`DEGENERATE_RANGE_PAD`] on each side.
pub fn activation_params(min: f64, max: f64) -> Result<QuantParams> {
    if !(min.is_finite() && max.is_finite()) || min > max {
        return invalid(format!("bad activation range [{}, {}]", min, max));
    }
    let (mut lo, mut hi) = (min.min(0.0), max.max(0.0));
    if lo == hi {
        lo -= DEGENERATE_RANGE_PAD;
        hi += DEGENERATE_RANGE_PAD;
    }
    let scale = (hi - lo) / 255.0;
    let zp = round_half_away(-128.0 - lo / scale).clamp(-128.0, 127.0) as i32;
    QuantParams::new(scale, zp)
}

/// Symmetric (`max|v| / 127`, zero point 0) or asymmetric (`(max-min)/255`)
/// quantization of a whole tensor. An all-zero symmetric tensor gets scale 1.
pub fn quantize_tensor(values: &[f64], symmetric: bool) -> Result<(Vec<i8>, QuantParams)> {
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("cannot quantize non-finite values");
    }
    let qp = if symmetric {
        let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        QuantParams::new(if m > 0.0 { m / 127.0 } else { 1.0 }, 0)?
    } else {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            activation_params(0.0, 0.0)?
        } else {
            activation_params(min, max)?
        }
    };
    Ok((values.iter().map(|&v| quantize_value(v, &qp)).collect(), qp))
}

/// Symmetric quantization with one scale per output channel, the channel
/// being the innermost axis of `values`.
pub fn quantize_per_channel(values: &[f64], channels: usize) -> Result<(Vec<i8>, Vec<QuantParams>)> {
    if channels == 0 || !values.len().is_multiple_of(channels) {
        return invalid("value count is not a multiple of the channel count");
    }
    let mut params = Vec::with_capacity(channels);
    for c in 0..channels {
        let col: Vec<f64> = values.iter().skip(c).step_by(channels).copied().collect();
        params.push(quantize_tensor(&col, true)?.1);
    }
    let q = values
        .iter()
        .enumerate()
        .map(|(i, &v)| quantize_value(v, &params[i % channels]))
        .collect();
    Ok((q, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_example() {
        let (q, qp) = quantize_tensor(&[-1.0, 0.5, 1.0], true).unwrap();
        assert_eq!(qp.scale(), 1.0 / 127.0);
        assert_eq!(qp.zero_point(), 0);
        assert_eq!(q, vec![-127, 64, 127]);
        assert!((dequantize(64, &qp) - 0.50394).abs() < 1e-5);
    }

    #[test]
    fn asymmetric_example() {
        let qp = activation_params(0.0, 1.0).unwrap();
        assert_eq!(qp.scale(), 1.0 / 255.0);
        assert_eq!(qp.zero_point(), -128);
        assert_eq!(quantize_value(0.5, &qp), 0);
        assert!((dequantize(0, &qp) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn zero_is_exact() {
        for (lo, hi) in [(0.0, 1.0), (-3.0, 0.2), (0.1, 7.0), (-5.0, -1.0), (0.0, 0.0)] {
            let qp = activation_params(lo, hi).unwrap();
            let q = quantize_value(0.0, &qp);
            assert_eq!(q as i32, qp.zero_point());
            assert_eq!(dequantize(q, &qp), 0.0);
        }
    }

    #[test]
    fn degenerate_range_is_padded() {
        let qp = activation_params(0.0, 0.0).unwrap();
        assert!((qp.scale() - 2e-3 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn all_zero_weights_get_unit_scale() {
        let (q, qp) = quantize_tensor(&[0.0; 4], true).unwrap();
        assert_eq!(qp.scale(), 1.0);
        assert!(q.iter().all(|&v| v == 0));
    }

    #[test]
    fn per_channel_uses_innermost_axis() {
        let (q, p) = quantize_per_channel(&[1.0, 10.0, -0.5, 5.0], 2).unwrap();
        assert_eq!(p[0].scale(), 1.0 / 127.0);
        assert_eq!(p[1].scale(), 10.0 / 127.0);
        assert_eq!(q, vec![127, 127, -64, 64]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quantize_tensor(&[f64::NAN], true).is_err());
        assert!(activation_params(1.0, 0.0).is_err());
        assert!(QuantParams::new(0.0, 0).is_err());
        assert!(QuantParams::new(1.0, 128).is_err());
    }
}

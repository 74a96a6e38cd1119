use crate::error::{invalid, Result};

/// Splits a positive real multiplier into `M0 * 2^-31 * 2^shift` with
/// `M0` in `[2^30, 2^31)`.
pub fn decompose_multiplier(m: f64) -> Result<(i32, i32)> {
    if !(m > 0.0 && m.is_finite()) {
        return invalid(format!("requantization multiplier {} must be positive and finite", m));
    }
    let mut shift = m.log2().floor() as i32 + 1;
    let mut frac = m / 2f64.powi(shift);
    // log2 rounding can leave frac just outside [0.5, 1)
    while frac >= 1.0 {
        frac /= 2.0;
        shift += 1;
    }
    while frac < 0.5 {
        frac *= 2.0;
        shift -= 1;
    }
    let mut m0 = (frac * 2f64.powi(31)).round() as i64;
    if m0 == 1i64 << 31 {
        m0 /= 2;
        shift += 1;
    }
    Ok((m0 as i32, shift))
}

/// Multiplier for rescaling an accumulator with scale `s_in * s_w` to an
/// output with scale `s_out`.
pub fn requant_multiplier(s_in: f64, s_w: f64, s_out: f64) -> Result<(i32, i32)> {
    if !(s_in > 0.0 && s_w > 0.0 && s_out > 0.0) {
        return invalid("scales must be positive");
    }
    decompose_multiplier(s_in * s_w / s_out)
}

/// `round(acc * M0 * 2^(shift - 31))`, rounding half away from zero, in
/// integer arithmetic only.
#[inline]
pub fn requantize(acc: i32, m0: i32, shift: i32) -> i32 {
    let prod = acc as i64 * m0 as i64;
    let right = 31 - shift;
    let v = if right <= 0 {
        prod << (-right).min(32)
    } else if right >= 63 {
        0
    } else {
        let half = 1i64 << (right - 1);
        if prod >= 0 {
            (prod + half) >> right
        } else {
            -((-prod + half) >> right)
        }
    };
    v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

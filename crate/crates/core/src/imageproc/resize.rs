use super::Plane8;
use crate::error::{invalid, Result};

/// Bilinear resize with half-pixel centers: `src = (dst + 0.5) * in/out - 0.5`,
/// clamped to the border.
///
/// Source positions are kept as exact fractions over `2 * out`, so the
/// blend is computed in integers and rounding ties are resolved exactly.
pub fn resize_bilinear(p: &Plane8, out_w: usize, out_h: usize) -> Result<Plane8> {
    if out_w == 0 || out_h == 0 {
        return invalid(format!("output size {}x{} must be positive", out_w, out_h));
    }
    let (xs, dx) = axis_taps(p.width, out_w);
    let (ys, dy) = axis_taps(p.height, out_h);
    let denom = dx * dy;
    let mut values = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let r0 = &p.values[y0 * p.width..(y0 + 1) * p.width];
        let r1 = &p.values[y1 * p.width..(y1 + 1) * p.width];
        for &(x0, x1, fx) in &xs {
            let top = (dx - fx) * r0[x0] as u64 + fx * r0[x1] as u64;
            let bottom = (dx - fx) * r1[x0] as u64 + fx * r1[x1] as u64;
            let v = (dy - fy) * top + fy * bottom;
            values.push(((2 * v + denom) / (2 * denom)).min(255) as u8);
        }
    }
    Plane8::new(out_w, out_h, values)
}

/// Per output coordinate: the two source indices and the weight of the
/// second, in units of the returned denominator.
fn axis_taps(n_in: usize, n_out: usize) -> (Vec<(usize, usize, u64)>, u64) {
    let den = 2 * n_out as u64;
    let max = (n_in as u64 - 1) * den;
    let taps = (0..n_out as u64)
        .map(|d| {
            // (d + 0.5) * in / out - 0.5, scaled by 2 * out
            let num = ((2 * d + 1) * n_in as u64).saturating_sub(n_out as u64).min(max);
            let i0 = (num / den) as usize;
            (i0, (i0 + 1).min(n_in - 1), num % den)
        })
        .collect();
    (taps, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let p = Plane8::constant(13, 7, 77).unwrap();
        for (w, h) in [(1, 1), (5, 9), (40, 3), (13, 7)] {
            let r = resize_bilinear(&p, w, h).unwrap();
            assert!(r.values().iter().all(|&v| v == 77));
        }
    }

    #[test]
    fn zero_size_rejected() {
        let p = Plane8::constant(4, 4, 1).unwrap();
        assert!(resize_bilinear(&p, 0, 4).is_err());
        assert!(resize_bilinear(&p, 4, 0).is_err());
    }

    #[test]
    fn same_size_is_identity() {
        let p = Plane8::from_fn(9, 5, |x, y| (x * 20 + y * 3) as u8).unwrap();
        assert_eq!(resize_bilinear(&p, 9, 5).unwrap(), p);
    }
}

use super::{Plane8, PreprocConfig};
use crate::error::Result;
use crate::scalar::round_half_away;

/// Normalized 1-D Gaussian taps for `sigma`, radius `ceil(3 * sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable Gaussian blur with reflected borders. The result is kept in
/// double precision; callers decide how to quantize it.
pub fn gaussian_blur(p: &Plane8, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (p.width(), p.height());

    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let src = &p.values()[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * src[reflect(x as isize + j as isize - r, w)] as f64;
            }
            rows[y * w + x] = acc;
        }
    }

    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (j, kv) in k.iter().enumerate() {
            let sy = reflect(y as isize + j as isize - r, h);
            let src = &rows[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Affine combination of a plane and its blurred copy:
/// `clamp(round(alpha * x + beta * blur(x) + gamma), 0, 255)`.
pub fn clarity_boost(p: &Plane8, cfg: &PreprocConfig) -> Result<Plane8> {
    cfg.validate()?;
    let blurred = gaussian_blur(p, cfg.sigma());
    let values = p
        .values()
        .iter()
        .zip(&blurred)
        .map(|(&x, &y)| {
            let v = cfg.boost_alpha * x as f64 + cfg.boost_beta * y + cfg.boost_gamma;
            round_half_away(v).clamp(0.0, 255.0) as u8
        })
        .collect();
    Plane8::new(p.width(), p.height(), values)
}

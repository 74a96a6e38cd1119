//! Seeded training-time augmentation: flips, rotation and zoom, in that order.
//!
//! Every sample gets its own generator stream (`seed ^ index`), so the result
//! for a given sample does not depend on loading order or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Generator used for all augmentation and shuffling.
pub type StreamRng = ChaCha8Rng;

/// Generator for sample `index` under `seed`.
pub fn sample_stream(seed: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed ^ index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability of a flip, applied independently per axis.
    pub flip_prob: f64,
    pub rotate_prob: f64,
    /// Rotation angles are drawn from `[-rotate_range_deg, rotate_range_deg]`.
    pub rotate_range_deg: f64,
    /// Zoom factors are drawn from `[1 - zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            rotate_prob: 0.8,
            rotate_range_deg: 25.0,
            zoom_range: 0.10,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.flip_prob) || !prob_ok(self.rotate_prob) {
            return invalid("augmentation probabilities must lie in [0, 1]");
        }
        if !(self.rotate_range_deg >= 0.0 && self.rotate_range_deg.is_finite()) {
            return invalid("rotate_range_deg must be finite and non-negative");
        }
        if !(self.zoom_range >= 0.0 && self.zoom_range < 1.0) {
            return invalid("zoom_range must lie in [0, 1)");
        }
        Ok(())
    }

    /// Augmentation disabled.
    pub fn identity() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            rotate_prob: 0.0,
            rotate_range_deg: 0.0,
            zoom_range: 0.0,
            seed: 0,
        }
    }
}

fn plane_dims<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.nhwc()? {
        (1, h, w, 1) => Ok((h, w)),
        _ => invalid(format!("expected a (1,H,W,1) tensor, got {:?}", t.shape())),
    }
}

pub fn flip_horizontal<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = plane_dims(t)?;
    let src = t.data();
    let data = (0..h * w).map(|i| src[(i / w) * w + (w - 1 - i % w)]).collect();
    Tensor::from_vec(t.shape(), data)
}

pub fn flip_vertical<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = plane_dims(t)?;
    let src = t.data();
    let data = (0..h * w).map(|i| src[(h - 1 - i / w) * w + i % w]).collect();
    Tensor::from_vec(t.shape(), data)
}

/// Horizontal flip with `flip_prob`, then vertical flip with `flip_prob`.
/// Always consumes exactly two draws.
pub fn random_flip<T: Scalar, R: Rng>(
    t: &Tensor<T>,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<Tensor<T>> {
    let horizontal = rng.random::<f64>() < cfg.flip_prob;
    let vertical = rng.random::<f64>() < cfg.flip_prob;
    let mut out = t.clone();
    if horizontal {
        out = flip_horizontal(&out)?;
    }
    if vertical {
        out = flip_vertical(&out)?;
    }
    Ok(out)
}

/// Continuous whole-sample reflection into `[0, n - 1]`.
fn reflect_coord(u: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let m = u.rem_euclid(period);
    if m <= last {
        m
    } else {
        period - m
    }
}

fn sample_bilinear(src: &[f64], h: usize, w: usize, sx: f64, sy: f64) -> f64 {
    let x = reflect_coord(sx, w);
    let y = reflect_coord(sy, h);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let top = (1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
    let bottom = (1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
    (1.0 - fy) * top + fy * bottom
}

/// Resamples a plane through an inverse map `(x, y) -> (src_x, src_y)` given
/// in centered coordinates.
fn warp<T: Scalar>(t: &Tensor<T>, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Result<Tensor<T>> {
    let (h, w) = plane_dims(t)?;
    let src: Vec<f64> = t.data().iter().map(|v| v.to_f64_lossless()).collect();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = inverse(x as f64 - cx, y as f64 - cy);
            data.push(T::of(sample_bilinear(&src, h, w, dx + cx, dy + cy)));
        }
    }
    Tensor::from_vec(t.shape(), data)
}

/// Rotates about the image center by `degrees` (counter-clockwise as
/// displayed, y axis pointing down), with reflective fill.
pub fn rotate<T: Scalar>(t: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    if degrees == 0.0 {
        plane_dims(t)?;
        return Ok(t.clone());
    }
    let (s, c) = degrees.to_radians().sin_cos();
    warp(t, |x, y| (c * x - s * y, s * x + c * y))
}

/// Scales about the image center by `factor`; factors below one shrink the
/// content and expose reflected borders.
pub fn zoom<T: Scalar>(t: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return invalid(format!("zoom factor {} must be positive", factor));
    }
    if factor == 1.0 {
        plane_dims(t)?;
        return Ok(t.clone());
    }
    warp(t, |x, y| (x / factor, y / factor))
}

fn require_square<T: Scalar>(t: &Tensor<T>) -> Result<()> {
    let (h, w) = plane_dims(t)?;
    if h != w {
        return invalid(format!("expected square spatial dims, got {}x{}", h, w));
    }
    Ok(())
}

/// With probability `rotate_prob`, rotates by a uniform angle. The angle is
/// drawn only when the gate passes.
pub fn random_rotation<T: Scalar, R: Rng>(
    t: &Tensor<T>,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<Tensor<T>> {
    require_square(t)?;
    if rng.random::<f64>() >= cfg.rotate_prob {
        return Ok(t.clone());
    }
    let r = cfg.rotate_range_deg;
    let theta = rng.random_range(-r..=r);
    rotate(t, theta)
}

/// Zooms by a factor drawn uniformly from `[1 - zoom_range, 1 + zoom_range]`.
pub fn random_zoom<T: Scalar, R: Rng>(
    t: &Tensor<T>,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<Tensor<T>> {
    require_square(t)?;
    let z = cfg.zoom_range;
    let factor = rng.random_range(1.0 - z..=1.0 + z);
    zoom(t, factor)
}

/// Flip, rotation, zoom.
pub fn augment<T: Scalar, R: Rng>(
    t: &Tensor<T>,
    rng: &mut R,
    cfg: &AugmentConfig,
) -> Result<Tensor<T>> {
    let t = random_flip(t, rng, cfg)?;
    let t = random_rotation(&t, rng, cfg)?;
    random_zoom(&t, rng, cfg)
}

/// [`augment`] on the stream belonging to sample `index`.
pub fn augment_sample<T: Scalar>(
    t: &Tensor<T>,
    cfg: &AugmentConfig,
    index: u64,
) -> Result<Tensor<T>> {
    let mut rng = sample_stream(cfg.seed, index);
    augment(t, &mut rng, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(side: usize) -> Tensor<f64> {
        let data = (0..side * side)
            .map(|i| (i as f64) / (side * side) as f64)
            .collect();
        Tensor::from_vec(&[1, side, side, 1], data).unwrap()
    }

    #[test]
    fn zero_flip_prob_is_identity() {
        let t = ramp(6);
        let cfg = AugmentConfig {
            flip_prob: 0.0,
            ..Default::default()
        };
        let mut rng = sample_stream(1, 2);
        assert_eq!(random_flip(&t, &mut rng, &cfg).unwrap(), t);
    }

    #[test]
    fn double_certain_flip_is_identity() {
        let t = ramp(5);
        let cfg = AugmentConfig {
            flip_prob: 1.0,
            ..Default::default()
        };
        let mut rng = sample_stream(3, 0);
        let once = random_flip(&t, &mut rng, &cfg).unwrap();
        assert_ne!(once, t);
        let twice = random_flip(&once, &mut rng, &cfg).unwrap();
        assert_eq!(twice, t);
    }

    #[test]
    fn seeded_replay_is_bit_identical() {
        let t = ramp(16).cast::<f32>();
        let cfg = AugmentConfig {
            seed: 99,
            ..Default::default()
        };
        for i in 0..8 {
            assert_eq!(
                augment_sample(&t, &cfg, i).unwrap(),
                augment_sample(&t, &cfg, i).unwrap()
            );
        }
    }

    #[test]
    fn zero_angle_and_unit_zoom_are_identity() {
        let t = ramp(7);
        assert_eq!(rotate(&t, 0.0).unwrap(), t);
        assert_eq!(zoom(&t, 1.0).unwrap(), t);
    }

    #[test]
    fn constants_survive_warps() {
        let t = Tensor::<f64>::filled(&[1, 9, 9, 1], 0.37);
        for a in [-25.0, -3.0, 12.5, 90.0] {
            assert!(rotate(&t, a).unwrap().data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
        for s in [0.9, 0.95, 1.1] {
            assert!(zoom(&t, s).unwrap().data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn rotation_requires_square() {
        let t = Tensor::<f64>::zeros(&[1, 4, 5, 1]);
        let mut rng = sample_stream(0, 0);
        assert!(random_rotation(&t, &mut rng, &AugmentConfig::default()).is_err());
        assert!(random_zoom(&t, &mut rng, &AugmentConfig::default()).is_err());
    }

    #[test]
    fn reflect_coord_mirrors_about_edges() {
        assert_eq!(reflect_coord(-1.5, 4), 1.5);
        assert_eq!(reflect_coord(4.0, 4), 2.0);
        assert_eq!(reflect_coord(2.25, 4), 2.25);
    }
}

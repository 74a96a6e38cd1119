//! Fundus preprocessing: green channel, resize, CLAHE, clarity boost, normalization.
//!
//! All stages are pure functions over 8-bit planes until [`normalize`], which
//! produces the float tensor consumed by the network.

mod boost;
mod clahe;
mod io;
mod resize;

pub use boost::{clarity_boost, gaussian_blur, gaussian_kernel};
pub use clahe::{clahe, clahe_tile_luts, clip_histogram, TileGrid};
pub use io::{load_rgb, save_plane};
pub use resize::resize_bilinear;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid("image dimensions must be positive");
        }
        if pixels.len() != width * height {
            return invalid(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            ));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
}

/// Single-channel 8-bit plane, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Plane8 {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl Plane8 {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return invalid("plane dimensions must be positive");
        }
        if values.len() != width * height {
            return invalid(format!(
                "{}x{} plane needs {} values, got {}",
                width,
                height,
                width * height,
                values.len()
            ));
        }
        Ok(Plane8 {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, v: u8) -> Result<Self> {
        Plane8::new(width, height, vec![v; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Plane8::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }
}

/// Preprocessing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocConfig {
    pub target_side: usize,
    pub clahe_clip: f64,
    pub clahe_tiles: TileGrid,
    /// Blur level; the Gaussian sigma is `blur_level / 4`.
    pub blur_level: f64,
    pub boost_alpha: f64,
    pub boost_beta: f64,
    pub boost_gamma: f64,
}

impl Default for PreprocConfig {
    fn default() -> Self {
        PreprocConfig {
            target_side: 256,
            clahe_clip: 2.0,
            clahe_tiles: TileGrid { cols: 8, rows: 8 },
            blur_level: 40.0,
            boost_alpha: 4.0,
            boost_beta: -4.0,
            boost_gamma: 128.0,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_side == 0 {
            return invalid("target_side must be positive");
        }
        if !(self.clahe_clip >= 1.0) || !self.clahe_clip.is_finite() {
            return invalid("clahe_clip must be >= 1");
        }
        if self.clahe_tiles.cols == 0 || self.clahe_tiles.rows == 0 {
            return invalid("clahe_tiles must be at least 1x1");
        }
        let boost = [
            self.blur_level,
            self.boost_alpha,
            self.boost_beta,
            self.boost_gamma,
        ];
        if boost.iter().any(|v| !v.is_finite()) || self.blur_level <= 0.0 {
            return invalid("blur and boost parameters must be finite, blur_level positive");
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.blur_level / 4.0
    }
}

pub fn extract_green(img: &RgbImage) -> Plane8 {
    Plane8 {
        width: img.width,
        height: img.height,
        values: img.pixels.iter().map(|p| p[1]).collect(),
    }
}

/// Maps intensities to `[0, 1]` by dividing by 255. Output shape `(1, H, W, 1)`.
pub fn normalize<T: Scalar>(p: &Plane8) -> Tensor<T> {
    let data = p.values.iter().map(|&v| T::of(v as f64 / 255.0)).collect();
    Tensor::from_vec(&[1, p.height, p.width, 1], data).expect("plane dimensions")
}

/// Full pipeline: green channel, resize to `target_side`, CLAHE, clarity boost.
pub fn preprocess_plane(img: &RgbImage, cfg: &PreprocConfig) -> Result<Plane8> {
    cfg.validate()?;
    let green = extract_green(img);
    let resized = resize_bilinear(&green, cfg.target_side, cfg.target_side)?;
    let equalized = clahe(&resized, cfg.clahe_clip, cfg.clahe_tiles)?;
    clarity_boost(&equalized, cfg)
}

/// [`preprocess_plane`] followed by [`normalize`].
pub fn preprocess<T: Scalar>(img: &RgbImage, cfg: &PreprocConfig) -> Result<Tensor<T>> {
    Ok(normalize(&preprocess_plane(img, cfg)?))
}

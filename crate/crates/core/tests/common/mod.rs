#![allow(dead_code)]

use drnet_core::dataset::synthetic_fundus;
use drnet_core::imageproc::{preprocess, PreprocConfig, TileGrid};
use drnet_core::network::ModelConfig;
use drnet_core::training::LabeledSet;
use drnet_core::{Tensor, NUM_CLASSES};

/// Preprocessing scaled down for small test images.
pub fn small_preproc(side: usize) -> PreprocConfig {
    PreprocConfig {
        target_side: side,
        clahe_tiles: TileGrid { cols: 4, rows: 4 },
        blur_level: 40.0 * side as f64 / 256.0,
        ..PreprocConfig::default()
    }
}

/// Preprocessed synthetic fundus images, labels cycling through the stages.
pub fn synthetic_set(n: usize, side: usize, seed: u64) -> LabeledSet<f32> {
    let cfg = small_preproc(side);
    let labels: Vec<usize> = (0..n).map(|i| i % NUM_CLASSES).collect();
    let images = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let img = synthetic_fundus(side * 2, l as u8, seed.wrapping_mul(1_000_003) + i as u64).unwrap();
            preprocess::<f32>(&img, &cfg).unwrap()
        })
        .collect();
    LabeledSet { images, labels }
}

pub fn tiny_config(side: usize) -> ModelConfig {
    ModelConfig::conv_net(side, &[8, 16], 2, 32, NUM_CLASSES, 0.0)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn to_f64<T: drnet_core::Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossless()).collect()
}
pub mod oracles;

//! Float and integer-only execution paths and latency measurement.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::network::layers::{argmax, softmax_fwd};
use crate::network::{check_input, Model};
use crate::quantize::{dequantize, quantize_value, IntKernel, LinearKind, QLayer, QModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Guard against floating-point use inside the integer-only layer chain.
///
/// [`infer_int8`] opens an [`IntegerSection`] after quantizing the input and
/// closes it before dequantizing the logits. Every accessor that hands out
/// real-valued quantization metadata calls [`float_access`], which panics
/// while a section is open on the current thread.
pub mod trap {
    use std::cell::Cell;

    thread_local! {
        static ACTIVE: Cell<bool> = const { Cell::new(false) };
    }

    pub struct IntegerSection {
        prev: bool,
    }

    impl IntegerSection {
        pub fn enter() -> Self {
            IntegerSection {
                prev: ACTIVE.with(|a| a.replace(true)),
            }
        }
    }

    impl Drop for IntegerSection {
        fn drop(&mut self) {
            ACTIVE.with(|a| a.set(self.prev));
        }
    }

    pub fn active() -> bool {
        ACTIVE.with(|a| a.get())
    }

    #[track_caller]
    pub fn float_access(what: &str) {
        if active() {
            panic!("float trap: {} used inside the integer-only section", what);
        }
    }
}

/// Class probabilities and the predicted stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

impl Prediction {
    fn from_row<T: Scalar>(row: &[T]) -> Self {
        Prediction {
            class: argmax(row),
            probs: row.iter().map(|v| v.to_f64_lossless()).collect(),
        }
    }
}

/// Inference-mode float forward on a single `(1, H, W, 1)` tensor.
pub fn infer_float<T: Scalar>(model: &Model<T>, tensor: &Tensor<T>) -> Result<Prediction> {
    if tensor.shape().first() != Some(&1) {
        return invalid("infer_float takes a single-sample tensor");
    }
    let p = model.infer(tensor)?;
    Ok(Prediction::from_row(p.data()))
}

#[inline]
fn requant_channel(acc: i32, k: &IntKernel, c: usize) -> i8 {
    let v = crate::quantize::requantize(acc, k.m0[c], k.shift[c]) + k.output_zero_point;
    v.clamp(k.clamp_lo[c] as i32, k.clamp_hi[c] as i32) as i8
}

/// Integer 3x3 same-padded convolution on one `(h, w, in)` int8 map.
///
/// Accumulates `(q_in - zp_in) * q_w` plus the int32 bias, requantizes with
/// the per-channel fixed-point multiplier, adds the output zero point and
/// clamps. Padding contributes nothing because padded inputs sit at `zp_in`.
pub fn qconv2d(input: &[i8], h: usize, w: usize, k: &IntKernel) -> Result<Vec<i8>> {
    let (ci, co) = (k.in_channels, k.out_channels);
    if k.kind != LinearKind::Conv3x3 || input.len() != h * w * ci {
        return invalid("qconv2d input does not match the kernel");
    }
    let zp = k.input_zero_point;
    let mut out = vec![0i8; h * w * co];
    let mut acc = vec![0i32; co];
    let mut centered = vec![0i32; ci];
    for y in 0..h {
        for x in 0..w {
            acc.copy_from_slice(&k.bias);
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (x + kx).checked_sub(1).filter(|&v| v < w) else {
                        continue;
                    };
                    let px = &input[(iy * w + ix) * ci..][..ci];
                    for (c, &q) in centered.iter_mut().zip(px) {
                        *c = q as i32 - zp;
                    }
                    let wk = &k.weight[(ky * 3 + kx) * ci * co..][..ci * co];
                    for (c, &v) in centered.iter().enumerate() {
                        if v == 0 {
                            continue;
                        }
                        for (a, &wv) in acc.iter_mut().zip(&wk[c * co..][..co]) {
                            *a += v * wv as i32;
                        }
                    }
                }
            }
            let o = &mut out[(y * w + x) * co..][..co];
            for c in 0..co {
                o[c] = requant_channel(acc[c], k, c);
            }
        }
    }
    Ok(out)
}

/// Integer fully connected layer on one flat int8 vector.
pub fn qdense(input: &[i8], k: &IntKernel) -> Result<Vec<i8>> {
    if k.kind != LinearKind::Dense || input.len() != k.in_channels {
        return invalid("qdense input does not match the kernel");
    }
    let co = k.out_channels;
    let mut acc = k.bias.clone();
    for (i, &q) in input.iter().enumerate() {
        let v = q as i32 - k.input_zero_point;
        if v == 0 {
            continue;
        }
        for (a, &wv) in acc.iter_mut().zip(&k.weight[i * co..][..co]) {
            *a += v * wv as i32;
        }
    }
    Ok((0..co).map(|c| requant_channel(acc[c], k, c)).collect())
}

/// 2x2 stride-2 max pooling on an int8 `(h, w, c)` map.
pub fn qmaxpool(input: &[i8], h: usize, w: usize, c: usize) -> Vec<i8> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let at = |dy: usize, dx: usize| input[((2 * y + dy) * w + 2 * x + dx) * c + ch];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

/// Runs the integer layer chain on a quantized input map. Integer-only.
pub fn run_integer_chain(model: &QModel, mut q: Vec<i8>) -> Result<Vec<i8>> {
    let _section = trap::IntegerSection::enter();
    let side = model.config.input_side;
    let (mut h, mut w, mut c) = (side, side, model.config.input_channels);
    for l in &model.layers {
        match l {
            QLayer::Linear(lin) => {
                let k = &lin.kernel;
                q = match k.kind {
                    LinearKind::Conv3x3 => qconv2d(&q, h, w, k)?,
                    LinearKind::Dense => qdense(&q, k)?,
                };
                c = k.out_channels;
            }
            QLayer::MaxPool => {
                q = qmaxpool(&q, h, w, c);
                h /= 2;
                w /= 2;
            }
            QLayer::Flatten => {
                c *= h * w;
                h = 1;
                w = 1;
            }
        }
    }
    Ok(q)
}

/// Quantizes the input once, runs the integer chain, dequantizes the logits
/// and applies softmax in float.
pub fn infer_int8<T: Scalar>(model: &QModel, tensor: &Tensor<T>) -> Result<Prediction> {
    let n = check_input(&model.config, tensor.shape())?;
    if n != 1 {
        return invalid("infer_int8 takes a single-sample tensor");
    }
    if !tensor.all_finite() {
        return invalid("input contains non-finite values");
    }
    let q: Vec<i8> = tensor
        .data()
        .iter()
        .map(|v| quantize_value(v.to_f64_lossless(), &model.input))
        .collect();
    let logits_q = run_integer_chain(model, q)?;
    if logits_q.len() != model.config.num_classes {
        return Err(Error::InvalidModel(format!(
            "integer chain produced {} logits",
            logits_q.len()
        )));
    }
    let logits: Vec<f64> = logits_q.iter().map(|&v| dequantize(v, &model.output)).collect();
    let p = softmax_fwd(&Tensor::from_vec(&[1, logits.len()], logits)?);
    Ok(Prediction::from_row(p.data()))
}

/// [`infer_int8`] over many inputs on a pool of `workers` threads. Output
/// order follows input order.
pub fn infer_int8_batch<T: Scalar>(
    model: &QModel,
    tensors: &[Tensor<T>],
    workers: usize,
) -> Result<Vec<Prediction>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidState(e.to_string()))?;
    pool.install(|| tensors.par_iter().map(|t| infer_int8(model, t)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub images: usize,
    pub repetitions: usize,
    /// Per-image latency of every timed run, milliseconds.
    pub samples_ms: Vec<f64>,
    pub min_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    /// `1000 / median_ms`.
    pub fps: f64,
    pub model_bytes: usize,
}

/// Times [`infer_int8`] single-threaded, after one warm-up pass. Each sample
/// is the mean per-image latency of one pass over `images`; preprocessing is
/// excluded.
pub fn benchmark<T: Scalar>(model: &QModel, images: &[Tensor<T>], repetitions: usize) -> Result<BenchReport> {
    if images.is_empty() {
        return invalid("benchmark needs at least one image");
    }
    if repetitions < 3 {
        return invalid("benchmark needs at least 3 repetitions");
    }
    for img in images {
        infer_int8(model, img)?;
    }
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for img in images {
            std::hint::black_box(infer_int8(model, img)?);
        }
        samples.push(start.elapsed().as_secs_f64() * 1e3 / images.len() as f64);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    };
    Ok(BenchReport {
        images: images.len(),
        repetitions,
        min_ms: sorted[0],
        median_ms: median,
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        fps: if median > 0.0 { 1e3 / median } else { f64::INFINITY },
        samples_ms: samples,
        model_bytes: model.serialized_size(),
    })
}

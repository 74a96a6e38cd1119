//! Layer kernels on NHWC tensors. Convolution weights are laid out
//! `(3, 3, in, out)`, dense weights `(in, out)`.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 3x3 same-padded convolution, stride 1.
pub fn conv2d_fwd<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    out_c: usize,
) -> Result<Tensor<T>> {
    let (n, h, w, in_c) = x.nhwc()?;
    if weight.len() != 9 * in_c * out_c || bias.len() != out_c {
        return invalid(format!(
            "conv weights for {}->{} channels have {} / {} elements",
            in_c,
            out_c,
            weight.len(),
            bias.len()
        ));
    }
    let per_in = h * w * in_c;
    let per_out = h * w * out_c;
    let mut out = vec![T::zero(); n * per_out];
    out.par_chunks_mut(per_out)
        .zip(x.data().par_chunks(per_in))
        .for_each(|(o, xi)| conv_sample(xi, weight, bias, o, h, w, in_c, out_c));
    Tensor::from_vec(&[n, h, w, out_c], out)
}

#[allow(clippy::too_many_arguments)]
fn conv_sample<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
    h: usize,
    w: usize,
    in_c: usize,
    out_c: usize,
) {
    for y in 0..h {
        for xo in 0..w {
            let o = &mut out[(y * w + xo) * out_c..][..out_c];
            o.copy_from_slice(bias);
            for ky in 0..3 {
                let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(ix) = (xo + kx).checked_sub(1).filter(|&v| v < w) else {
                        continue;
                    };
                    let px = &x[(iy * w + ix) * in_c..][..in_c];
                    let wk = &weight[(ky * 3 + kx) * in_c * out_c..][..in_c * out_c];
                    for (ci, &v) in px.iter().enumerate() {
                        if v == T::zero() {
                            continue;
                        }
                        let row = &wk[ci * out_c..][..out_c];
                        for (acc, &wv) in o.iter_mut().zip(row) {
                            *acc += v * wv;
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d_fwd`]: `(dx, dweight, dbias)`.
pub fn conv2d_bwd<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (n, h, w, in_c) = x.nhwc()?;
    let (_, _, _, out_c) = dy.nhwc()?;
    if dy.shape() != [n, h, w, out_c] || weight.len() != 9 * in_c * out_c {
        return invalid("conv backward shape mismatch");
    }
    let per_in = h * w * in_c;
    let per_out = h * w * out_c;
    let partials: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
        .data()
        .par_chunks(per_in)
        .zip(dy.data().par_chunks(per_out))
        .map(|(xi, gi)| {
            let mut dx = vec![T::zero(); per_in];
            let mut dw = vec![T::zero(); weight.len()];
            let mut db = vec![T::zero(); out_c];
            for y in 0..h {
                for xo in 0..w {
                    let g = &gi[(y * w + xo) * out_c..][..out_c];
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d += gv;
                    }
                    for ky in 0..3 {
                        let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                            continue;
                        };
                        for kx in 0..3 {
                            let Some(ix) = (xo + kx).checked_sub(1).filter(|&v| v < w) else {
                                continue;
                            };
                            let base = (iy * w + ix) * in_c;
                            let koff = (ky * 3 + kx) * in_c * out_c;
                            for ci in 0..in_c {
                                let row = koff + ci * out_c;
                                let wr = &weight[row..row + out_c];
                                let dwr = &mut dw[row..row + out_c];
                                let v = xi[base + ci];
                                let mut acc = T::zero();
                                for ((dwv, &wv), &gv) in dwr.iter_mut().zip(wr).zip(g) {
                                    *dwv += v * gv;
                                    acc += wv * gv;
                                }
                                dx[base + ci] += acc;
                            }
                        }
                    }
                }
            }
            (dx, dw, db)
        })
        .collect();

    let mut dx = Vec::with_capacity(n * per_in);
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); out_c];
    for (pdx, pdw, pdb) in partials {
        dx.extend(pdx);
        add_into(&mut dw, &pdw);
        add_into(&mut db, &pdb);
    }
    Ok((Tensor::from_vec(x.shape(), dx)?, dw, db))
}

fn add_into<T: Scalar>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub fn relu_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(relu)
}

pub fn relu_bwd<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

fn channels<T>(x: &Tensor<T>) -> usize {
    *x.shape().last().expect("non-scalar tensor")
}

/// Inference-mode batch norm over the trailing (channel) axis.
pub fn batchnorm_fwd<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let c = channels(x);
    if [gamma.len(), beta.len(), mean.len(), var.len()] != [c; 4] {
        return invalid(format!("batch norm expects {} channels", c));
    }
    let scale: Vec<T> = (0..c).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
    let mut out = x.clone();
    for px in out.data_mut().chunks_mut(c) {
        for i in 0..c {
            px[i] = (px[i] - mean[i]) * scale[i] + beta[i];
        }
    }
    Ok(out)
}

/// Training-mode batch norm output plus what backward needs.
pub struct BatchStats<T> {
    pub normalized: Tensor<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Batch norm using the batch's own (biased) statistics.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<(Tensor<T>, BatchStats<T>)> {
    let c = channels(x);
    if gamma.len() != c || beta.len() != c {
        return invalid(format!("batch norm expects {} channels", c));
    }
    let m = x.len() / c;
    let mut mean = vec![0.0f64; c];
    for px in x.data().chunks(c) {
        for i in 0..c {
            mean[i] += px[i].to_f64_lossless();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let mut var = vec![0.0f64; c];
    for px in x.data().chunks(c) {
        for i in 0..c {
            let d = px[i].to_f64_lossless() - mean[i];
            var[i] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= m as f64);
    let mean: Vec<T> = mean.into_iter().map(T::of).collect();
    let var: Vec<T> = var.into_iter().map(T::of).collect();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut normalized = x.clone();
    for px in normalized.data_mut().chunks_mut(c) {
        for i in 0..c {
            px[i] = (px[i] - mean[i]) * inv_std[i];
        }
    }
    let mut y = normalized.clone();
    for px in y.data_mut().chunks_mut(c) {
        for i in 0..c {
            px[i] = px[i] * gamma[i] + beta[i];
        }
    }
    Ok((
        y,
        BatchStats {
            normalized,
            mean,
            var,
        },
    ))
}

/// Gradients of [`batchnorm_train`], including the paths through the batch
/// mean and variance: `(dx, dgamma, dbeta)`.
pub fn batchnorm_bwd<T: Scalar>(
    dy: &Tensor<T>,
    stats: &BatchStats<T>,
    gamma: &[T],
    eps: T,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let m = T::of((dy.len() / c) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (g, xh) in dy.data().chunks(c).zip(stats.normalized.data().chunks(c)) {
        for i in 0..c {
            dgamma[i] += g[i] * xh[i];
            dbeta[i] += g[i];
        }
    }
    // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
    let coef: Vec<T> = (0..c)
        .map(|i| gamma[i] / (stats.var[i] + eps).sqrt() / m)
        .collect();
    let mut dx = dy.clone();
    for (d, xh) in dx.data_mut().chunks_mut(c).zip(stats.normalized.data().chunks(c)) {
        for i in 0..c {
            d[i] = coef[i] * (m * d[i] - dbeta[i] - xh[i] * dgamma[i]);
        }
    }
    (dx, dgamma, dbeta)
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
/// Also returns the flat input index chosen for every output element.
pub fn maxpool_fwd<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = x.nhwc()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return invalid("max pooling needs at least 2x2 input");
    }
    let src = x.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut arg = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for y in 0..oh {
            for xo in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * y + dy) * w + 2 * xo + dx) * c + ch;
                        if best == usize::MAX || src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, oh, ow, c], out)?, arg))
}

pub fn maxpool_bwd<T: Scalar>(dy: &Tensor<T>, argmax: &[usize], in_shape: &[usize]) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    dx
}

/// Fully connected layer on `(N, in)` input.
pub fn dense_fwd<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    units: usize,
) -> Result<Tensor<T>> {
    let n = x.shape()[0];
    let fan_in = x.len() / n.max(1);
    if weight.len() != fan_in * units || bias.len() != units {
        return invalid(format!(
            "dense weights for {}->{} have {} / {} elements",
            fan_in,
            units,
            weight.len(),
            bias.len()
        ));
    }
    let mut out = vec![T::zero(); n * units];
    out.par_chunks_mut(units)
        .zip(x.data().par_chunks(fan_in))
        .for_each(|(o, xi)| {
            o.copy_from_slice(bias);
            for (i, &v) in xi.iter().enumerate() {
                if v == T::zero() {
                    continue;
                }
                for (acc, &wv) in o.iter_mut().zip(&weight[i * units..(i + 1) * units]) {
                    *acc += v * wv;
                }
            }
        });
    Tensor::from_vec(&[n, units], out)
}

/// Gradients of [`dense_fwd`]: `(dx, dweight, dbias)`.
pub fn dense_bwd<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let n = x.shape()[0];
    let fan_in = x.len() / n;
    let units = dy.len() / n;
    let xs = x.data();
    let gs = dy.data();

    let mut dw = vec![T::zero(); weight.len()];
    dw.par_chunks_mut(units).enumerate().for_each(|(i, row)| {
        for b in 0..n {
            let v = xs[b * fan_in + i];
            if v == T::zero() {
                continue;
            }
            for (d, &g) in row.iter_mut().zip(&gs[b * units..(b + 1) * units]) {
                *d += v * g;
            }
        }
    });
    let mut db = vec![T::zero(); units];
    for g in gs.chunks(units) {
        add_into(&mut db, g);
    }
    let mut dx = vec![T::zero(); n * fan_in];
    dx.par_chunks_mut(fan_in)
        .zip(gs.par_chunks(units))
        .for_each(|(d, g)| {
            for (i, dv) in d.iter_mut().enumerate() {
                let row = &weight[i * units..(i + 1) * units];
                *dv = row.iter().zip(g).map(|(&wv, &gv)| wv * gv).sum();
            }
        });
    (
        Tensor::from_vec(x.shape(), dx).expect("same shape"),
        dw,
        db,
    )
}

/// Row-wise softmax with max subtraction.
pub fn softmax_fwd<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = channels(logits);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Keeps each element with probability `1 - rate` and rescales kept values by
/// `1 / (1 - rate)`. Returns the output and the per-element scale mask.
pub fn dropout_fwd<T: Scalar, R: rand::Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut R,
) -> (Tensor<T>, Vec<T>) {
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| {
            if rng.random::<f64>() >= rate {
                keep
            } else {
                T::zero()
            }
        })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    (Tensor::from_vec(x.shape(), data).expect("same shape"), mask)
}

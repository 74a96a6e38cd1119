//! Direct-formula reference implementations, written independently of the
//! library code and evaluated in double precision.
#![allow(dead_code)]

fn round_half_away(v: f64) -> f64 {
    v.signum() * (v.abs() + 0.5).floor()
}

fn tent(d: f64) -> f64 {
    (1.0 - d.abs()).max(0.0)
}

/// Bilinear sample as an explicit sum of tent weights over every source
/// pixel. Coordinates must already lie inside the image.
fn tent_sample(src: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let mut acc = 0.0;
    for j in 0..h {
        let wy = tent(y - j as f64);
        if wy == 0.0 {
            continue;
        }
        for i in 0..w {
            acc += wy * tent(x - i as f64) * src[j * w + i];
        }
    }
    acc
}

/// Half-pixel-center bilinear resize, border-clamped, rounded to 8 bits.
/// Evaluated exactly: positions are fractions over `2 * out`, and the result
/// is a tent-weighted sum over every source pixel in integers.
pub fn resize(src: &[u8], w: usize, h: usize, ow: usize, oh: usize) -> Vec<u8> {
    let pos = |d: usize, n_in: usize, n_out: usize| -> i128 {
        let den = 2 * n_out as i128;
        (((2 * d as i128 + 1) * n_in as i128) - n_out as i128).clamp(0, (n_in as i128 - 1) * den)
    };
    let tent_i = |num: i128, k: usize, den: i128| (den - (num - k as i128 * den).abs()).max(0);
    let (dx, dy) = (2 * ow as i128, 2 * oh as i128);
    let mut out = Vec::new();
    for y in 0..oh {
        let sy = pos(y, h, oh);
        for x in 0..ow {
            let sx = pos(x, w, ow);
            let mut acc: i128 = 0;
            for j in 0..h {
                let wy = tent_i(sy, j, dy);
                if wy == 0 {
                    continue;
                }
                for i in 0..w {
                    acc += wy * tent_i(sx, i, dx) * src[j * w + i] as i128;
                }
            }
            // Round half away from zero: floor(acc / D + 1/2) for acc >= 0.
            let d = dx * dy;
            out.push(((2 * acc + d).div_euclid(2 * d)).clamp(0, 255) as u8);
        }
    }
    out
}

/// Mirror a continuous coordinate about the first and last sample centers
/// until it lands inside `[0, n-1]`.
pub fn mirror(mut u: f64, n: usize) -> f64 {
    let last = (n - 1) as f64;
    if last == 0.0 {
        return 0.0;
    }
    loop {
        if u < 0.0 {
            u = -u;
        } else if u > last {
            u = 2.0 * last - u;
        } else {
            return u;
        }
    }
}

/// Applies a forward affine map `p = A (q - c) + c` by sampling the source
/// at `q = A^-1 (p - c) + c`, with mirrored borders.
fn affine(src: &[f64], side: usize, a: [[f64; 2]; 2]) -> Vec<f64> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ];
    let c = (side as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let (px, py) = (x as f64 - c, y as f64 - c);
            let qx = inv[0][0] * px + inv[0][1] * py + c;
            let qy = inv[1][0] * px + inv[1][1] * py + c;
            out.push(tent_sample(src, side, side, mirror(qx, side), mirror(qy, side)));
        }
    }
    out
}

/// Counter-clockwise rotation as displayed (image y axis points down).
pub fn rotate(src: &[f64], side: usize, degrees: f64) -> Vec<f64> {
    let t = degrees.to_radians();
    // In display coordinates (x right, y down) a visual CCW turn is
    // x' = x cos t + y sin t, y' = -x sin t + y cos t.
    affine(src, side, [[t.cos(), t.sin()], [-t.sin(), t.cos()]])
}

/// Magnification about the center.
pub fn zoom(src: &[f64], side: usize, factor: f64) -> Vec<f64> {
    affine(src, side, [[factor, 0.0], [0.0, factor]])
}

/// 2-D Gaussian blur evaluated as a direct (non-separable) sum over the
/// square window of radius `ceil(3 sigma)`, mirrored borders without edge
/// repetition.
pub fn gaussian_blur(src: &[u8], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let refl = |mut i: i64, n: usize| -> usize {
        let n = n as i64;
        if n == 1 {
            return 0;
        }
        loop {
            if i < 0 {
                i = -i;
            } else if i >= n {
                i = 2 * (n - 1) - i;
            } else {
                return i as usize;
            }
        }
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                    let sx = refl(x as i64 + dx, w);
                    let sy = refl(y as i64 + dy, h);
                    acc += g * src[sy * w + sx] as f64;
                    norm += g;
                }
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

pub fn clarity_boost(src: &[u8], w: usize, h: usize, sigma: f64, alpha: f64, beta: f64, gamma: f64) -> Vec<u8> {
    let b = gaussian_blur(src, w, h, sigma);
    src.iter()
        .zip(&b)
        .map(|(&x, &y)| round_half_away(alpha * x as f64 + beta * y + gamma).clamp(0.0, 255.0) as u8)
        .collect()
}

/// CLAHE mapping of one tile. The tile spans `[x0, x0+tw) x [y0, y0+th)`;
/// coordinates past the image edge take the nearest edge pixel.
#[allow(clippy::too_many_arguments)]
pub fn clahe_tile_lut(src: &[u8], w: usize, h: usize, x0: usize, y0: usize, tw: usize, th: usize, clip: f64) -> Vec<u8> {
    let n = tw * th;
    let mut hist = vec![0u64; 256];
    for y in y0..y0 + th {
        for x in x0..x0 + tw {
            hist[src[y.min(h - 1) * w + x.min(w - 1)] as usize] += 1;
        }
    }
    let limit = ((clip * n as f64 / 256.0).floor() as u64).max(1);
    let excess: u64 = hist.iter().map(|&c| c.saturating_sub(limit)).sum();
    let mut clipped: Vec<u64> = hist.iter().map(|&c| c.min(limit)).collect();
    // Hand the excess out one count at a time, cycling from bin 0.
    for k in 0..excess {
        clipped[(k % 256) as usize] += 1;
    }
    let mut cdf = 0u64;
    clipped
        .iter()
        .map(|&c| {
            cdf += c;
            round_half_away(cdf as f64 * 255.0 / n as f64).min(255.0) as u8
        })
        .collect()
}

/// Same-padded 3x3 convolution, NHWC input, (ky, kx, in, out) weights.
pub fn conv3x3(x: &[f64], n: usize, h: usize, w: usize, ci: usize, wt: &[f64], b: &[f64], co: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * h * w * co];
    for s in 0..n {
        for y in 0..h as i64 {
            for xx in 0..w as i64 {
                for o in 0..co {
                    let mut acc = b[o];
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            let (iy, ix) = (y + ky - 1, xx + kx - 1);
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            for c in 0..ci {
                                let xv = x[((s * h + iy as usize) * w + ix as usize) * ci + c];
                                acc += xv * wt[((ky * 3 + kx) as usize * ci + c) * co + o];
                            }
                        }
                    }
                    out[((s * h + y as usize) * w + xx as usize) * co + o] = acc;
                }
            }
        }
    }
    out
}

pub fn dense(x: &[f64], wt: &[f64], b: &[f64], fan_in: usize, units: usize) -> Vec<f64> {
    x.chunks(fan_in)
        .flat_map(|row| (0..units).map(move |o| b[o] + (0..fan_in).map(|i| row[i] * wt[i * units + o]).sum::<f64>()))
        .collect()
}

/// Macro metrics computed the long way: explicit TP/FP/FN counting.
pub struct Metrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

pub fn metrics(cm: &[[u64; 5]; 5]) -> Metrics {
    let (mut precision, mut recall, mut f1) = (vec![], vec![], vec![]);
    let mut total = 0u64;
    let mut correct = 0u64;
    for c in 0..5 {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        for t in 0..5 {
            for p in 0..5 {
                let v = cm[t][p];
                if t == c && p == c {
                    tp += v;
                } else if p == c {
                    fp += v;
                } else if t == c {
                    fn_ += v;
                }
                if c == 0 {
                    total += v;
                    if t == p {
                        correct += v;
                    }
                }
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        // F1 as 2TP / (2TP + FP + FN), equivalent to the harmonic mean.
        let f = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    Metrics {
        macro_f1: f1.iter().sum::<f64>() / 5.0,
        precision,
        recall,
        f1,
        accuracy: correct as f64 / total as f64,
    }
}

use serde::{Deserialize, Serialize};

use super::Plane8;
use crate::error::{invalid, Result};

/// Tile grid for CLAHE, in tiles per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileGrid {
    pub cols: usize,
    pub rows: usize,
}

impl Default for TileGrid {
    fn default() -> Self {
        TileGrid { cols: 8, rows: 8 }
    }
}

struct Tiling {
    tile_w: usize,
    tile_h: usize,
}

impl Tiling {
    fn new(p: &Plane8, grid: TileGrid) -> Result<Self> {
        if grid.cols == 0 || grid.rows == 0 {
            return invalid("tile grid must be at least 1x1");
        }
        if grid.cols > p.width() || grid.rows > p.height() {
            return invalid(format!(
                "{}x{} tiles exceed the {}x{} image",
                grid.cols,
                grid.rows,
                p.width(),
                p.height()
            ));
        }
        Ok(Tiling {
            tile_w: p.width().div_ceil(grid.cols),
            tile_h: p.height().div_ceil(grid.rows),
        })
    }

    fn tile_pixels(&self) -> usize {
        self.tile_w * self.tile_h
    }
}

/// Clips a histogram at `limit` and redistributes the excess once: an equal
/// share to every bin, then the remainder one count per bin starting at bin 0.
pub fn clip_histogram(hist: &mut [u32; 256], limit: u32) {
    let mut excess = 0u32;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let share = excess / 256;
    let remainder = (excess % 256) as usize;
    for (i, h) in hist.iter_mut().enumerate() {
        *h += share + u32::from(i < remainder);
    }
}

fn clip_limit(clip: f64, tile_pixels: usize) -> u32 {
    ((clip * tile_pixels as f64 / 256.0).floor() as u32).max(1)
}

/// Per-tile lookup tables, row-major over the tile grid. Images that do not
/// divide evenly are padded by edge replication.
pub fn clahe_tile_luts(p: &Plane8, clip: f64, grid: TileGrid) -> Result<Vec<[u8; 256]>> {
    if !(clip >= 1.0) {
        return invalid(format!("clip limit {} must be >= 1", clip));
    }
    let tiling = Tiling::new(p, grid)?;
    let n = tiling.tile_pixels();
    let limit = clip_limit(clip, n);
    let mut luts = Vec::with_capacity(grid.cols * grid.rows);
    for ty in 0..grid.rows {
        for tx in 0..grid.cols {
            let mut hist = [0u32; 256];
            for y in ty * tiling.tile_h..(ty + 1) * tiling.tile_h {
                let sy = y.min(p.height() - 1);
                for x in tx * tiling.tile_w..(tx + 1) * tiling.tile_w {
                    let sx = x.min(p.width() - 1);
                    hist[p.get(sx, sy) as usize] += 1;
                }
            }
            clip_histogram(&mut hist, limit);
            let mut lut = [0u8; 256];
            let mut cdf = 0u64;
            let n = n as u64;
            for (v, h) in hist.iter().enumerate() {
                cdf += *h as u64;
                // round(cdf * 255 / n), exact
                lut[v] = ((510 * cdf + n) / (2 * n)).min(255) as u8;
            }
            luts.push(lut);
        }
    }
    Ok(luts)
}

/// Contrast-limited adaptive histogram equalization.
///
/// Each output pixel blends the mappings of the (up to) four nearest tile
/// centers bilinearly; border pixels fall back to two or one mapping.
pub fn clahe(p: &Plane8, clip: f64, grid: TileGrid) -> Result<Plane8> {
    let luts = clahe_tile_luts(p, clip, grid)?;
    let tiling = Tiling::new(p, grid)?;
    let (xs, dx) = blend_taps(p.width(), tiling.tile_w, grid.cols);
    let (ys, dy) = blend_taps(p.height(), tiling.tile_h, grid.rows);
    let denom = dx * dy;

    let mut out = Vec::with_capacity(p.values().len());
    for (y, &(r0, r1, fy)) in ys.iter().enumerate() {
        for (x, &(c0, c1, fx)) in xs.iter().enumerate() {
            let v = p.get(x, y) as usize;
            let m = |r: usize, c: usize| luts[r * grid.cols + c][v] as u64;
            let top = (dx - fx) * m(r0, c0) + fx * m(r0, c1);
            let bottom = (dx - fx) * m(r1, c0) + fx * m(r1, c1);
            let blended = (dy - fy) * top + fy * bottom;
            out.push(((2 * blended + denom) / (2 * denom)).min(255) as u8);
        }
    }
    Plane8::new(p.width(), p.height(), out)
}

/// For each pixel along an axis: the two neighbouring tile indices and the
/// weight of the second, over the returned denominator `2 * tile`. Tile
/// centers sit at `(i + 0.5) * tile - 0.5`.
fn blend_taps(n: usize, tile: usize, tiles: usize) -> (Vec<(usize, usize, u64)>, u64) {
    let den = 2 * tile as u64;
    let last = (tiles as u64 - 1) * den;
    let taps = (0..n as u64)
        .map(|i| {
            // (i + 0.5) / tile - 0.5, scaled by 2 * tile
            let g = (2 * i + 1) as i64 - tile as i64;
            if g <= 0 {
                (0, 0, 0)
            } else if g as u64 >= last {
                (tiles - 1, tiles - 1, 0)
            } else {
                let t0 = (g as u64 / den) as usize;
                (t0, t0 + 1, g as u64 % den)
            }
        })
        .collect();
    (taps, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_plane_stays_constant() {
        for v in [0u8, 17, 128, 255] {
            let p = Plane8::constant(40, 24, v).unwrap();
            let out = clahe(&p, 2.0, TileGrid { cols: 8, rows: 8 }).unwrap();
            let first = out.values()[0];
            assert!(out.values().iter().all(|&o| o == first));
        }
    }

    #[test]
    fn clip_redistributes_remainder_from_bin_zero() {
        let mut h = [0u32; 256];
        h[10] = 10 + 256 * 2 + 3;
        clip_histogram(&mut h, 10);
        assert_eq!(h[10], 12);
        assert_eq!(h[0], 3);
        assert_eq!(h[2], 3);
        assert_eq!(h[3], 2);
        assert_eq!(h.iter().sum::<u32>(), 10 + 256 * 2 + 3);
    }

    #[test]
    fn tiles_larger_than_image_rejected() {
        let p = Plane8::constant(4, 4, 9).unwrap();
        assert!(clahe(&p, 2.0, TileGrid { cols: 5, rows: 1 }).is_err());
        assert!(clahe(&p, 2.0, TileGrid { cols: 0, rows: 1 }).is_err());
        assert!(clahe(&p, 0.9, TileGrid { cols: 1, rows: 1 }).is_err());
    }

    #[test]
    fn odd_sizes_keep_dimensions() {
        let p = Plane8::from_fn(37, 21, |x, y| ((x * 7 + y * 11) % 256) as u8).unwrap();
        let out = clahe(&p, 2.0, TileGrid { cols: 8, rows: 8 }).unwrap();
        assert_eq!((out.width(), out.height()), (37, 21));
    }
}

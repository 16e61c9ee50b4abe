//! Resampling equirectangular maps onto a target grid.
//!
//! Downsampling averages every source pixel by its exact solid-angle overlap
//! with the target pixel, which conserves `Σ w·I`. Upsampling is bilinear.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::GridDims;
use crate::image::{EnvMap, RgbImage};

pub const MIN_SOURCE: GridDims = GridDims { width: 8, height: 4 };

pub fn resample(env: &EnvMap, target: GridDims) -> Result<EnvMap> {
    let src = env.dims();
    if src == target {
        return Ok(env.clone());
    }
    if src.width < MIN_SOURCE.width || src.height < MIN_SOURCE.height {
        return Err(Error::Usage(format!(
            "cannot resample a {src} map; need at least {MIN_SOURCE}"
        )));
    }
    if target.width == 0 || target.height == 0 {
        return Err(Error::Usage(format!("empty resample target {target}")));
    }
    let image = if target.width <= src.width && target.height <= src.height {
        box_downsample(env.image(), target)
    } else {
        bilinear(env.image(), target)
    };
    let mut out = EnvMap::new(image)?;
    out.source = env.source.clone();
    Ok(out)
}

/// For each target cell along one axis, the overlapping source cells and the
/// overlap measure under `measure(lo, hi)`.
fn overlaps(src_n: usize, dst_n: usize, span: f64, measure: impl Fn(f64, f64) -> f64) -> Vec<Vec<(usize, f64)>> {
    let (ds, dd) = (span / src_n as f64, span / dst_n as f64);
    (0..dst_n)
        .map(|t| {
            let (lo, hi) = (t as f64 * dd, (t + 1) as f64 * dd);
            let first = ((lo / ds).floor() as usize).min(src_n - 1);
            let last = ((hi / ds).ceil() as usize).min(src_n);
            (first..last)
                .filter_map(|s| {
                    let a = lo.max(s as f64 * ds);
                    let b = hi.min((s + 1) as f64 * ds);
                    (b > a).then(|| (s, measure(a, b)))
                })
                .collect()
        })
        .collect()
}

fn box_downsample(src: &RgbImage, target: GridDims) -> RgbImage {
    let cols = overlaps(src.width(), target.width, 2.0 * PI, |a, b| b - a);
    let rows = overlaps(src.height(), target.height, PI, |a, b| a.cos() - b.cos());
    let mut out = RgbImage::zeros(target);
    for (ty, row) in rows.iter().enumerate() {
        for (tx, col) in cols.iter().enumerate() {
            let mut acc = [0.0; 3];
            let mut area = 0.0;
            for &(sy, wy) in row {
                for &(sx, wx) in col {
                    let w = wx * wy;
                    let p = src.get(sx, sy);
                    for ch in 0..3 {
                        acc[ch] += w * p[ch];
                    }
                    area += w;
                }
            }
            out.set(tx, ty, acc.map(|v| if area > 0.0 { v / area } else { 0.0 }));
        }
    }
    out
}

fn bilinear(src: &RgbImage, target: GridDims) -> RgbImage {
    let sx = src.width() as f64 / target.width as f64;
    let sy = src.height() as f64 / target.height as f64;
    RgbImage::from_fn(target, |x, y| {
        let fx = (x as f64 + 0.5) * sx - 0.5;
        let fy = (y as f64 + 0.5) * sy - 0.5;
        src.sample_bilinear(fx, fy).map(|v| v.max(0.0))
    })
}

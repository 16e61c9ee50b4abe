//! Preview rendering: spheres lit by an environment, tone mapping and
//! time-stacked scanlines.
//!
//! Balls are seen by an orthographic camera on +X looking at the origin, with
//! +Y to the right and +Z up. A ball of roughness `r` is shaded as
//! `(1 − r)·S + r·E(n)`, where `S` is the GGX-filtered environment around the
//! mirror direction and `E` the SH irradiance at the normal. A constant unit
//! environment therefore shades an `r = 1` ball at exactly `E = π`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::asg::{AsgMixture, RealizedMixture};
use crate::error::{Error, Result};
use crate::geometry::{reseed_tangent, Direction, GridDims, SampleGrid, Vec3};
use crate::image::{EnvMap, Rgb, RgbImage};
use crate::sh::{lambertian_convolve, DiffuseOperator, ShCoeffs};

pub const DEFAULT_SAMPLES: usize = 256;
pub const DEFAULT_BALL_SIZE: usize = 128;
pub const DEFAULT_SEED: u64 = 0x5eed;

/// Grid used to project a mixture onto SH for the diffuse term.
const MIXTURE_SH_HEIGHT: usize = 64;

/// Something that can be queried for incoming radiance.
pub enum Lighting {
    Env(EnvMap),
    Mixture(RealizedMixture),
}

impl Lighting {
    pub fn from_mixture(m: &AsgMixture) -> Result<Self> {
        Ok(Lighting::Mixture(m.realize()?))
    }

    pub fn radiance(&self, d: &Direction) -> Rgb {
        match self {
            Lighting::Env(env) => env.lookup(d),
            Lighting::Mixture(m) => m.eval(d),
        }
    }

    /// Irradiance coefficients (already convolved with the cosine lobe).
    pub fn irradiance_sh(&self) -> Result<ShCoeffs> {
        let (image, grid) = match self {
            Lighting::Env(env) => (env.image().clone(), SampleGrid::new(env.dims())?),
            Lighting::Mixture(m) => {
                let grid = SampleGrid::with_height(MIXTURE_SH_HEIGHT)?;
                (m.eval_grid(&grid), grid)
            }
        };
        Ok(lambertian_convolve(&DiffuseOperator::new(&grid).project(&image)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallSettings {
    pub size: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for BallSettings {
    fn default() -> Self {
        BallSettings {
            size: DEFAULT_BALL_SIZE,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
        }
    }
}

/// Jittered stratified points in the unit square; `n` is rounded up to a
/// square number of strata.
fn stratified(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let side = (n as f64).sqrt().ceil().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let a = (i as f64 + rng.gen::<f64>()) / side as f64;
            let b = (j as f64 + rng.gen::<f64>()) / side as f64;
            out.push((a, b));
        }
    }
    out
}

fn reflect(v: &Vec3, h: &Vec3) -> Vec3 {
    2.0 * v.dot(h) * h - v
}

/// GGX-filtered radiance around the mirror direction of `view` about `n`,
/// weighted by `n·l` over importance-sampled half vectors.
fn specular(light: &Lighting, n: &Vec3, view: &Vec3, roughness: f64, pattern: &[(f64, f64)]) -> Rgb {
    let alpha2 = (roughness * roughness).powi(2);
    let t = reseed_tangent(n);
    let b = n.cross(&t);
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for &(u1, u2) in pattern {
        let phi = 2.0 * std::f64::consts::PI * u1;
        let cos_t = ((1.0 - u2) / (1.0 + (alpha2 - 1.0) * u2)).sqrt();
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let h = t * (sin_t * phi.cos()) + b * (sin_t * phi.sin()) + n * cos_t;
        let l = reflect(view, &h);
        let nl = n.dot(&l);
        if nl <= 0.0 {
            continue;
        }
        let radiance = light.radiance(&Direction::new_unchecked(l.normalize()));
        for ch in 0..3 {
            acc[ch] += nl * radiance[ch];
        }
        wsum += nl;
    }
    if wsum > 0.0 {
        acc.map(|v| v / wsum)
    } else {
        light.radiance(&Direction::new_unchecked(reflect(view, n).normalize()))
    }
}

/// Renders one row of balls, one per roughness value in `(0, 1]`. Pixels
/// outside the spheres are black.
pub fn render_balls(light: &Lighting, roughness: &[f64], settings: &BallSettings) -> Result<RgbImage> {
    if roughness.is_empty() {
        return Err(Error::Usage("no roughness values given".into()));
    }
    if let Some(r) = roughness.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(Error::Usage(format!("roughness {r} outside (0, 1]")));
    }
    if settings.size == 0 || settings.samples == 0 {
        return Err(Error::Usage("ball size and sample count must be positive".into()));
    }
    let irradiance = light.irradiance_sh()?;
    let pattern = stratified(settings.samples, settings.seed);
    let size = settings.size;
    let dims = GridDims::new(size * roughness.len(), size);
    let view = Vec3::x();
    let rows: Vec<Vec<Rgb>> = (0..size)
        .into_par_iter()
        .map(|py| {
            let mut row = vec![[0.0; 3]; dims.width];
            let t = 1.0 - 2.0 * (py as f64 + 0.5) / size as f64;
            for (k, &r) in roughness.iter().enumerate() {
                for px in 0..size {
                    let s = 2.0 * (px as f64 + 0.5) / size as f64 - 1.0;
                    let q = 1.0 - s * s - t * t;
                    if q < 0.0 {
                        continue;
                    }
                    let n = Vec3::new(q.sqrt(), s, t);
                    let spec = specular(light, &n, &view, r, &pattern);
                    let diff = irradiance.eval(&Direction::new_unchecked(n));
                    row[k * size + px] = std::array::from_fn(|ch| (1.0 - r) * spec[ch] + r * diff[ch].max(0.0));
                }
            }
            row
        })
        .collect();
    RgbImage::from_data(dims, rows.concat())
}

/// Row `row` of every frame, stacked top to bottom in frame order.
pub fn stack_rows(frames: &[RgbImage], row: usize) -> Result<RgbImage> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Usage("no frames to stack".into()))?;
    if row >= first.height() {
        return Err(Error::Usage(format!(
            "row {row} out of range (height {})",
            first.height()
        )));
    }
    let mut data = Vec::with_capacity(first.width() * frames.len());
    for f in frames {
        if f.dims != first.dims {
            return Err(Error::dims(first.dims, f.dims));
        }
        data.extend_from_slice(f.row(row));
    }
    RgbImage::from_data(GridDims::new(first.width(), frames.len()), data)
}

/// Mean absolute difference between consecutive rows, summed over channels.
pub fn temporal_variation(stack: &RgbImage) -> f64 {
    if stack.height() < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for y in 1..stack.height() {
        for (a, b) in stack.row(y).iter().zip(stack.row(y - 1)) {
            sum += (0..3).map(|ch| (a[ch] - b[ch]).abs()).sum::<f64>();
        }
    }
    sum / ((stack.height() - 1) * stack.width()) as f64
}

fn srgb_encode(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Linear radiance to 8-bit sRGB: scale by `exposure`, clamp to [0, 1],
/// apply the sRGB transfer curve, round.
pub fn tonemap(image: &RgbImage, exposure: f64) -> Vec<u8> {
    image
        .data
        .iter()
        .flat_map(|p| p.map(|v| (srgb_encode((v * exposure).clamp(0.0, 1.0)) * 255.0).round() as u8))
        .collect()
}

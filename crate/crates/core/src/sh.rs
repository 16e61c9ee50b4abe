//! Real spherical harmonics through band 3, projection by solid-angle
//! quadrature on the sample grid, and the Lambertian irradiance operator used
//! as the diffuse target.
//!
//! Basis convention: orthonormal real SH without the Condon–Shortley phase,
//! index `k = l(l+1) + m`. Band 3 survives projection but is annihilated by the
//! clamped-cosine kernel.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{Direction, SampleGrid};
use crate::image::{Rgb, RgbImage};

pub const SH_BANDS: usize = 4;
pub const SH_COUNT: usize = SH_BANDS * SH_BANDS;

/// Clamped-cosine convolution factors per band.
pub const LAMBERT_KERNEL: [f64; SH_BANDS] = [PI, 2.0 * PI / 3.0, PI / 4.0, 0.0];

#[inline]
pub fn band_of(k: usize) -> usize {
    (k as f64).sqrt() as usize
}

pub fn sh_basis(d: &Direction) -> [f64; SH_COUNT] {
    let v = d.vec();
    sh_basis_xyz(v.x, v.y, v.z)
}

#[inline]
pub(crate) fn sh_basis_xyz(x: f64, y: f64, z: f64) -> [f64; SH_COUNT] {
    // sqrt((2l+1)/4π · (l-|m|)!/(l+|m|)!) with the √2 for m ≠ 0 folded in.
    const C00: f64 = 0.282_094_791_773_878_14; // 1/(2√π)
    const C1: f64 = 0.488_602_511_902_919_9; // √(3/4π)
    const C2A: f64 = 1.092_548_430_592_079_2; // ½√(15/π)
    const C20: f64 = 0.315_391_565_252_520_05; // ¼√(5/π)
    const C22: f64 = 0.546_274_215_296_039_6; // ¼√(15/π)
    const C33: f64 = 0.590_043_589_926_643_5; // ¼√(35/2π)
    const C32: f64 = 2.890_611_442_640_554; // ½√(105/π)
    const C31: f64 = 0.457_045_799_464_465_8; // ¼√(21/2π)
    const C30: f64 = 0.373_176_332_590_115_4; // ¼√(7/π)
    const C32B: f64 = 1.445_305_721_320_277; // ¼√(105/π)
    let (x2, y2, z2) = (x * x, y * y, z * z);
    [
        C00,
        C1 * y,
        C1 * z,
        C1 * x,
        C2A * x * y,
        C2A * y * z,
        C20 * (3.0 * z2 - 1.0),
        C2A * x * z,
        C22 * (x2 - y2),
        C33 * y * (3.0 * x2 - y2),
        C32 * x * y * z,
        C31 * y * (5.0 * z2 - 1.0),
        C30 * z * (5.0 * z2 - 3.0),
        C31 * x * (5.0 * z2 - 1.0),
        C32B * z * (x2 - y2),
        C33 * x * (x2 - 3.0 * y2),
    ]
}

/// Per-channel coefficients for bands 0..=3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShCoeffs {
    pub coeffs: [Rgb; SH_COUNT],
}

impl Default for ShCoeffs {
    fn default() -> Self {
        ShCoeffs {
            coeffs: [[0.0; 3]; SH_COUNT],
        }
    }
}

impl ShCoeffs {
    pub fn get(&self, l: usize, m: isize) -> Rgb {
        assert!(l < SH_BANDS && m.unsigned_abs() <= l, "invalid SH index ({l}, {m})");
        self.coeffs[((l * (l + 1)) as isize + m) as usize]
    }

    pub fn eval(&self, d: &Direction) -> Rgb {
        let y = sh_basis(d);
        let mut out = [0.0; 3];
        for (yk, c) in y.iter().zip(&self.coeffs) {
            for ch in 0..3 {
                out[ch] += yk * c[ch];
            }
        }
        out
    }
}

/// Cached SH basis values for every pixel of a grid. Projection, irradiance
/// evaluation and the adjoint all reuse it.
#[derive(Debug, Clone)]
pub struct DiffuseOperator {
    grid: SampleGrid,
    basis: Vec<[f64; SH_COUNT]>,
}

const ROWS_PER_CHUNK: usize = 4;

impl DiffuseOperator {
    pub fn new(grid: &SampleGrid) -> Self {
        DiffuseOperator {
            grid: grid.clone(),
            basis: grid.directions().iter().map(sh_basis).collect(),
        }
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    /// `coeff[k][ch] = Σ_p w_p · image_p[ch] · Y_k(d_p)`.
    pub fn project(&self, image: &RgbImage) -> Result<ShCoeffs> {
        image.check_dims(self.grid.dims())?;
        Ok(self.reduce(&image.data, Some(self.grid.weights())))
    }

    /// `Σ_p weight_p · data_p · Y(d_p)`, with unit weights when `weights` is
    /// `None`. Partial sums are combined in row order.
    fn reduce(&self, data: &[Rgb], weights: Option<&[f64]>) -> ShCoeffs {
        let chunk = ROWS_PER_CHUNK * self.grid.width();
        let partials: Vec<ShCoeffs> = data
            .par_chunks(chunk)
            .zip(self.basis.par_chunks(chunk))
            .enumerate()
            .map(|(i, (px, basis))| {
                let w = weights.map(|w| &w[i * chunk..i * chunk + px.len()]);
                let mut acc = ShCoeffs::default();
                for (j, (p, y)) in px.iter().zip(basis).enumerate() {
                    let wj = w.map_or(1.0, |w| w[j]);
                    let wp = [wj * p[0], wj * p[1], wj * p[2]];
                    for (c, yk) in acc.coeffs.iter_mut().zip(y) {
                        c[0] += wp[0] * yk;
                        c[1] += wp[1] * yk;
                        c[2] += wp[2] * yk;
                    }
                }
                acc
            })
            .collect();
        let mut total = ShCoeffs::default();
        for part in &partials {
            for (t, p) in total.coeffs.iter_mut().zip(&part.coeffs) {
                for ch in 0..3 {
                    t[ch] += p[ch];
                }
            }
        }
        total
    }

    /// `Σ_k coeff[k] · Y_k(d_p)` at every grid pixel.
    pub fn evaluate(&self, coeffs: &ShCoeffs) -> RgbImage {
        let mut data = vec![[0.0; 3]; self.grid.len()];
        data.par_iter_mut().zip(self.basis.par_iter()).for_each(|(o, y)| {
            let mut v = [0.0; 3];
            for (yk, c) in y.iter().zip(&coeffs.coeffs) {
                v[0] += yk * c[0];
                v[1] += yk * c[1];
                v[2] += yk * c[2];
            }
            *o = v;
        });
        RgbImage {
            dims: self.grid.dims(),
            data,
        }
    }

    /// The diffuse map `D(env)`: project, convolve with the clamped cosine,
    /// evaluate on the grid.
    pub fn irradiance(&self, env: &RgbImage) -> Result<RgbImage> {
        Ok(self.evaluate(&lambertian_convolve(&self.project(env)?)))
    }

    /// Adjoint of [`DiffuseOperator::irradiance`]:
    /// `grad_p = w_p Σ_k A_l(k) Y_k(d_p) Σ_q upstream_q Y_k(d_q)`.
    pub fn irradiance_backprop(&self, upstream: &RgbImage) -> Result<RgbImage> {
        upstream.check_dims(self.grid.dims())?;
        let sums = self.reduce(&upstream.data, None);
        let mut out = self.evaluate(&lambertian_convolve(&sums));
        for (o, w) in out.data.iter_mut().zip(self.grid.weights()) {
            for c in o.iter_mut() {
                *c *= w;
            }
        }
        Ok(out)
    }
}

pub fn lambertian_convolve(c: &ShCoeffs) -> ShCoeffs {
    let mut out = *c;
    for (k, coeff) in out.coeffs.iter_mut().enumerate() {
        let a = LAMBERT_KERNEL[band_of(k)];
        for v in coeff.iter_mut() {
            *v *= a;
        }
    }
    out
}

pub fn project(env: &RgbImage, grid: &SampleGrid) -> Result<ShCoeffs> {
    DiffuseOperator::new(grid).project(env)
}

pub fn eval_irradiance(c: &ShCoeffs, grid: &SampleGrid) -> RgbImage {
    DiffuseOperator::new(grid).evaluate(c)
}

pub fn irradiance_backprop(upstream: &RgbImage, grid: &SampleGrid) -> Result<RgbImage> {
    DiffuseOperator::new(grid).irradiance_backprop(upstream)
}

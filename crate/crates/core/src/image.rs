//! Row-major linear RGB images and the validated environment map type.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::geometry::{direction_to_pixel, Direction, GridDims};

pub type Rgb = [f64; 3];

/// A row-major RGB image of unbounded real values. Intermediate results such
/// as irradiance maps (which can ring negative) and cotangents use this.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub dims: GridDims,
    pub data: Vec<Rgb>,
}

impl RgbImage {
    pub fn zeros(dims: GridDims) -> Self {
        RgbImage {
            dims,
            data: vec![[0.0; 3]; dims.pixel_count()],
        }
    }

    pub fn filled(dims: GridDims, value: Rgb) -> Self {
        RgbImage {
            dims,
            data: vec![value; dims.pixel_count()],
        }
    }

    pub fn from_data(dims: GridDims, data: Vec<Rgb>) -> Result<Self> {
        if data.len() != dims.pixel_count() {
            return Err(Error::dims(dims.pixel_count(), data.len()));
        }
        Ok(RgbImage { dims, data })
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(dims.pixel_count());
        for y in 0..dims.height {
            for x in 0..dims.width {
                data.push(f(x, y));
            }
        }
        RgbImage { dims, data }
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.dims.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Rgb) {
        self.data[y * self.dims.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[Rgb] {
        let w = self.dims.width;
        &self.data[y * w..(y + 1) * w]
    }

    pub fn scaled(&self, s: f64) -> RgbImage {
        RgbImage {
            dims: self.dims,
            data: self.data.iter().map(|p| p.map(|c| c * s)).collect(),
        }
    }

    pub(crate) fn check_dims(&self, dims: GridDims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::dims(dims, self.dims));
        }
        Ok(())
    }

    /// Bilinear lookup at real pixel coordinates, wrapping horizontally and
    /// clamping vertically.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Rgb {
        let (w, h) = (self.dims.width as isize, self.dims.height as isize);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0f = x.floor();
        let y0f = y.floor();
        let (tx, ty) = (x - x0f, y - y0f);
        let x0 = (x0f as isize).rem_euclid(w) as usize;
        let x1 = (x0f as isize + 1).rem_euclid(w) as usize;
        let y0 = y0f as usize;
        let y1 = ((y0f as isize + 1).min(h - 1)) as usize;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        std::array::from_fn(|ch| {
            (a[ch] * (1.0 - tx) + b[ch] * tx) * (1.0 - ty) + (c[ch] * (1.0 - tx) + d[ch] * tx) * ty
        })
    }

    /// Bilinear lookup of the radiance arriving from `d`.
    pub fn lookup(&self, d: &Direction) -> Rgb {
        let (x, y) = direction_to_pixel(d, self.dims);
        self.sample_bilinear(x, y)
    }
}

/// Where an environment map was loaded from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceInfo {
    pub path: Option<PathBuf>,
    pub original: GridDims,
}

/// An equirectangular HDR radiance map whose pixels are finite and
/// nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvMap {
    image: RgbImage,
    pub source: Option<SourceInfo>,
}

impl EnvMap {
    /// Validates the pixels, rejecting the first NaN, infinite or negative
    /// channel value.
    pub fn new(image: RgbImage) -> Result<Self> {
        validate_radiance(&image)?;
        Ok(EnvMap { image, source: None })
    }

    pub fn with_source(mut self, source: SourceInfo) -> Self {
        self.source = Some(source);
        self
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn into_image(self) -> RgbImage {
        self.image
    }

    pub fn dims(&self) -> GridDims {
        self.image.dims
    }

    pub fn width(&self) -> usize {
        self.image.dims.width
    }

    pub fn height(&self) -> usize {
        self.image.dims.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.image.data
    }

    pub fn lookup(&self, d: &Direction) -> Rgb {
        self.image.lookup(d)
    }
}

fn validate_radiance(image: &RgbImage) -> Result<()> {
    for (i, p) in image.data.iter().enumerate() {
        for (channel, &value) in p.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidPixel {
                    x: i % image.dims.width,
                    y: i / image.dims.width,
                    channel,
                    value,
                });
            }
        }
    }
    Ok(())
}

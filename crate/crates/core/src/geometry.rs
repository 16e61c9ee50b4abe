//! Equirectangular pixel/direction mapping, per-pixel solid angles and the
//! orthonormal lobe frame.
//!
//! Conventions: +Z is up. Colatitude θ is measured from +Z, azimuth φ from +X
//! counterclockwise when viewed from +Z. Pixel `(px, py)` samples its center:
//! θ = π(py + ½)/height, φ = 2π(px + ½)/width. Row 0 is the top (+Z) row.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Threshold below which a seed vector is treated as degenerate.
pub const FRAME_EPS: f64 = 1e-8;

/// A unit-length direction on the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vec3);

impl Direction {
    /// Normalizes `v`. Returns `None` for vectors shorter than [`FRAME_EPS`].
    pub fn new(v: Vec3) -> Option<Self> {
        let len = v.norm();
        (len > FRAME_EPS && len.is_finite()).then(|| Direction(v / len))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Option<Self> {
        Self::new(Vec3::new(x, y, z))
    }

    /// Wraps a vector the caller guarantees to be unit length.
    pub fn new_unchecked(v: Vec3) -> Self {
        Direction(v)
    }

    pub fn from_spherical(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Direction(Vec3::new(st * cp, st * sp, ct))
    }

    #[inline]
    pub fn vec(&self) -> &Vec3 {
        &self.0
    }

    #[inline]
    pub fn dot(&self, other: &Vec3) -> f64 {
        self.0.dot(other)
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }
}

impl std::ops::Neg for Direction {
    type Output = Direction;
    fn neg(self) -> Direction {
        Direction(-self.0)
    }
}

/// Width and height of an equirectangular image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct GridDims {
    pub width: usize,
    pub height: usize,
}

impl GridDims {
    pub fn new(width: usize, height: usize) -> Self {
        GridDims { width, height }
    }

    /// The 2:1 grid with the given height.
    pub fn with_height(height: usize) -> Self {
        GridDims {
            width: 2 * height,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

impl std::fmt::Display for GridDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

pub fn pixel_to_direction(px: usize, py: usize, dims: GridDims) -> Result<Direction> {
    if px >= dims.width || py >= dims.height {
        return Err(Error::Usage(format!("pixel ({px}, {py}) outside {dims} grid")));
    }
    Ok(pixel_center_direction(px, py, dims))
}

#[inline]
pub(crate) fn pixel_center_direction(px: usize, py: usize, dims: GridDims) -> Direction {
    let theta = PI * (py as f64 + 0.5) / dims.height as f64;
    let phi = 2.0 * PI * (px as f64 + 0.5) / dims.width as f64;
    Direction::from_spherical(theta, phi)
}

/// Real-valued pixel coordinates of `d`, the inverse of [`pixel_to_direction`]
/// on pixel centers.
///
/// φ is wrapped to `[0, 2π)`, so `px ∈ [-0.5, width - 0.5)`; the +X seam maps
/// to `px = -0.5`. `py` is clamped to `[-0.5, height - 0.5]`, the poles landing
/// on the clamp bounds.
pub fn direction_to_pixel(d: &Direction, dims: GridDims) -> (f64, f64) {
    let v = d.vec();
    let theta = v.z.clamp(-1.0, 1.0).acos();
    let mut phi = v.y.atan2(v.x);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    if phi >= 2.0 * PI {
        phi -= 2.0 * PI;
    }
    let px = phi * dims.width as f64 / (2.0 * PI) - 0.5;
    let py = theta * dims.height as f64 / PI - 0.5;
    (px, py.clamp(-0.5, dims.height as f64 - 0.5))
}

/// Exact solid angle of any pixel in row `py` (the sphere band area divided
/// by the row's pixel count).
pub fn solid_angle(py: usize, dims: GridDims) -> f64 {
    let h = dims.height as f64;
    let top = (PI * py as f64 / h).cos();
    let bottom = (PI * (py as f64 + 1.0) / h).cos();
    (2.0 * PI / dims.width as f64) * (top - bottom)
}

/// Per-pixel directions and solid-angle weights for a full equirectangular
/// grid, row-major.
#[derive(Debug, Clone)]
pub struct SampleGrid {
    dims: GridDims,
    directions: Vec<Direction>,
    weights: Vec<f64>,
}

impl SampleGrid {
    pub fn new(dims: GridDims) -> Result<Self> {
        if dims.width == 0 || dims.height == 0 {
            return Err(Error::Usage(format!("empty sample grid {dims}")));
        }
        let mut directions = Vec::with_capacity(dims.pixel_count());
        let mut weights = Vec::with_capacity(dims.pixel_count());
        for py in 0..dims.height {
            let w = solid_angle(py, dims);
            for px in 0..dims.width {
                directions.push(pixel_center_direction(px, py, dims));
                weights.push(w);
            }
        }
        Ok(SampleGrid {
            dims,
            directions,
            weights,
        })
    }

    /// The 2:1 grid with `height` rows.
    pub fn with_height(height: usize) -> Result<Self> {
        Self::new(GridDims::with_height(height))
    }

    /// A grid with arbitrary per-pixel directions and weights. Test-only
    /// degenerate configurations use this.
    pub fn from_parts(dims: GridDims, directions: Vec<Direction>, weights: Vec<f64>) -> Result<Self> {
        let n = dims.pixel_count();
        if directions.len() != n || weights.len() != n {
            return Err(Error::dims(n, directions.len().min(weights.len())));
        }
        Ok(SampleGrid {
            dims,
            directions,
            weights,
        })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }
    pub fn width(&self) -> usize {
        self.dims.width
    }
    pub fn height(&self) -> usize {
        self.dims.height
    }
    pub fn len(&self) -> usize {
        self.directions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn total_solid_angle(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Right-handed orthonormal lobe frame: tangent `u`, bi-tangent `v = n × u`,
/// lobe axis `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub u: Vec3,
    pub v: Vec3,
    pub n: Vec3,
}

/// Intermediate quantities of [`build_frame`], kept for backpropagation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FrameBuild {
    pub frame: Frame,
    pub n_len: f64,
    pub u_perp_len: f64,
}

pub fn build_frame(u_raw: &Vec3, n_raw: &Vec3) -> Result<Frame> {
    build_frame_traced(u_raw, n_raw).map(|b| b.frame)
}

pub(crate) fn build_frame_traced(u_raw: &Vec3, n_raw: &Vec3) -> Result<FrameBuild> {
    let n_len = n_raw.norm();
    if !n_len.is_finite() || n_len <= FRAME_EPS {
        return Err(Error::DegenerateFrame("lobe axis seed has near-zero length"));
    }
    let n = n_raw / n_len;
    let u_perp = u_raw - n * u_raw.dot(&n);
    let u_perp_len = u_perp.norm();
    if !u_perp_len.is_finite() || u_perp_len <= FRAME_EPS {
        return Err(Error::DegenerateFrame("tangent seed is parallel to the lobe axis"));
    }
    let u = u_perp / u_perp_len;
    let v = n.cross(&u);
    Ok(FrameBuild {
        frame: Frame { u, v, n },
        n_len,
        u_perp_len,
    })
}

/// Deterministic tangent seed for axis `n`: the coordinate axis along n's
/// smallest-magnitude component, orthogonalized against n.
pub fn reseed_tangent(n: &Vec3) -> Vec3 {
    let a = n.map(f64::abs);
    let axis = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let n_hat = n.normalize();
    (axis - n_hat * axis.dot(&n_hat)).normalize()
}

//! Procedural environments for tests, examples and the bundled sample HDRI.

use std::f64::consts::PI;

use nalgebra::Rotation3;

use crate::asg::AsgMixture;
use crate::error::Result;
use crate::geometry::{Direction, GridDims, SampleGrid, Vec3};
use crate::image::{EnvMap, Rgb, RgbImage};

/// A disk-shaped emitter with a soft edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskLight {
    pub direction: Vec3,
    /// Angular radius in radians.
    pub radius: f64,
    pub radiance: Rgb,
}

impl DiskLight {
    fn eval(&self, d: &Vec3) -> Rgb {
        let cos = d.dot(&self.direction).clamp(-1.0, 1.0);
        let angle = cos.acos();
        let edge = (self.radius * 0.1).max(1e-4);
        let t = ((self.radius + edge - angle) / (2.0 * edge)).clamp(0.0, 1.0);
        let s = t * t * (3.0 - 2.0 * t);
        self.radiance.map(|v| v * s)
    }
}

/// Gradient sky over a flat-colored ground plus any number of disk lights.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyScene {
    pub zenith: Rgb,
    pub horizon: Rgb,
    pub ground: Rgb,
    pub lights: Vec<DiskLight>,
}

impl SkyScene {
    /// Clear sky with a single small, very bright sun.
    pub fn sunny() -> Self {
        SkyScene {
            zenith: [0.25, 0.45, 0.9],
            horizon: [0.8, 0.85, 0.95],
            ground: [0.2, 0.17, 0.12],
            lights: vec![DiskLight {
                direction: Direction::from_spherical(0.3 * PI, 0.4 * PI).vec().to_owned(),
                radius: 0.04,
                radiance: [2000.0, 1800.0, 1500.0],
            }],
        }
    }

    /// Interior-like lighting: dim sky, a sun and two broad colored windows.
    /// This is the scene behind the bundled sample HDRI.
    pub fn studio() -> Self {
        SkyScene {
            zenith: [0.3, 0.35, 0.5],
            horizon: [0.6, 0.55, 0.5],
            ground: [0.15, 0.12, 0.1],
            lights: vec![
                DiskLight {
                    direction: Direction::from_spherical(0.28 * PI, 0.3 * PI).vec().to_owned(),
                    radius: 0.06,
                    radiance: [120.0, 105.0, 85.0],
                },
                DiskLight {
                    direction: Direction::from_spherical(0.45 * PI, 1.2 * PI).vec().to_owned(),
                    radius: 0.35,
                    radiance: [3.0, 4.0, 6.0],
                },
                DiskLight {
                    direction: Direction::from_spherical(0.6 * PI, 1.7 * PI).vec().to_owned(),
                    radius: 0.25,
                    radiance: [5.0, 2.5, 1.0],
                },
            ],
        }
    }

    pub fn eval(&self, d: &Vec3) -> Rgb {
        let mut out = if d.z >= 0.0 {
            let t = d.z.sqrt();
            std::array::from_fn(|ch| self.horizon[ch] * (1.0 - t) + self.zenith[ch] * t)
        } else {
            self.ground
        };
        for light in &self.lights {
            let l = light.eval(d);
            for ch in 0..3 {
                out[ch] += l[ch];
            }
        }
        out
    }

    /// The scene rotated by `angle` radians about +Z.
    pub fn rotated_z(&self, angle: f64) -> Self {
        let r = Rotation3::from_axis_angle(&Vec3::z_axis(), angle);
        SkyScene {
            lights: self
                .lights
                .iter()
                .map(|l| DiskLight {
                    direction: r * l.direction,
                    ..l.clone()
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Renders with `ss × ss` stratified samples per pixel.
    pub fn render(&self, dims: GridDims, ss: usize) -> Result<EnvMap> {
        let ss = ss.max(1);
        let (w, h) = (dims.width as f64, dims.height as f64);
        let n = (ss * ss) as f64;
        EnvMap::new(RgbImage::from_fn(dims, |x, y| {
            let mut acc = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    let theta = PI * (y as f64 + (sy as f64 + 0.5) / ss as f64) / h;
                    let phi = 2.0 * PI * (x as f64 + (sx as f64 + 0.5) / ss as f64) / w;
                    let d = Direction::from_spherical(theta, phi);
                    let v = self.eval(d.vec());
                    for ch in 0..3 {
                        acc[ch] += v[ch];
                    }
                }
            }
            acc.map(|v| v / n)
        }))
    }

    /// `frames` renders, each rotated `step` radians further about +Z.
    pub fn rotating_sequence(&self, dims: GridDims, frames: usize, step: f64) -> Result<Vec<EnvMap>> {
        (0..frames)
            .map(|t| self.rotated_z(step * t as f64).render(dims, 2))
            .collect()
    }
}

/// Evaluates `m` at every pixel center of `dims`.
pub fn render_mixture(m: &AsgMixture, dims: GridDims) -> Result<EnvMap> {
    let grid = SampleGrid::new(dims)?;
    EnvMap::new(m.realize()?.eval_grid(&grid))
}

/// Unit `(u, n)` seeds with `n` along `axis`, `u` twisted by `twist` radians.
pub fn frame_towards(axis: &Vec3, twist: f64) -> (Vec3, Vec3) {
    let n = axis.normalize();
    let helper = if n.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let a = helper.cross(&n).normalize();
    let b = n.cross(&a);
    let u = a * twist.cos() + b * twist.sin();
    (u, n)
}

//! Compression of HDR environment map sequences into temporally consistent
//! mixtures of anisotropic spherical Gaussians.

pub mod asg;
pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod resample;
pub mod sh;
pub mod synth;

pub use asg::{AsgMixture, AsgParams, ParamGrad, RealizedLobe};
pub use error::{Error, Result};
pub use geometry::{Direction, Frame, GridDims, SampleGrid, Vec3};
pub use image::{EnvMap, Rgb, RgbImage};

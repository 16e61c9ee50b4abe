//! Error and stability metrics for fitted mixtures.

use serde::{Deserialize, Serialize};

use crate::asg::{check_same_count, realized_lobes, AsgMixture};
use crate::error::{Error, Result};
use crate::geometry::SampleGrid;
use crate::image::RgbImage;
use crate::sh::DiffuseOperator;

/// Per-frame comparison of a reconstruction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    /// `Σ w·|pred − gt|` over pixels and channels.
    pub weighted_l1: f64,
    /// `Σ w·(pred − gt)²` over pixels and channels.
    pub weighted_l2: f64,
    /// Weighted L1 between the two diffuse irradiance maps.
    pub diffuse_l1: f64,
    /// `Σ w·pred / Σ w·gt`, summed over channels.
    pub energy_ratio: f64,
}

pub fn weighted_l1(pred: &RgbImage, gt: &RgbImage, grid: &SampleGrid) -> Result<f64> {
    weighted_sum(pred, gt, grid, |d| d.abs())
}

pub fn weighted_l2(pred: &RgbImage, gt: &RgbImage, grid: &SampleGrid) -> Result<f64> {
    weighted_sum(pred, gt, grid, |d| d * d)
}

fn weighted_sum(pred: &RgbImage, gt: &RgbImage, grid: &SampleGrid, f: impl Fn(f64) -> f64) -> Result<f64> {
    pred.check_dims(grid.dims())?;
    gt.check_dims(grid.dims())?;
    Ok(pred
        .data
        .iter()
        .zip(&gt.data)
        .zip(grid.weights())
        .map(|((p, g), w)| w * (0..3).map(|ch| f(p[ch] - g[ch])).sum::<f64>())
        .sum())
}

pub fn energy(image: &RgbImage, grid: &SampleGrid) -> Result<f64> {
    image.check_dims(grid.dims())?;
    Ok(image
        .data
        .iter()
        .zip(grid.weights())
        .map(|(p, w)| w * (p[0] + p[1] + p[2]))
        .sum())
}

pub fn energy_ratio(pred: &RgbImage, gt: &RgbImage, grid: &SampleGrid) -> Result<f64> {
    let e_gt = energy(gt, grid)?;
    if e_gt <= 0.0 {
        return Err(Error::Usage("ground truth carries no energy".into()));
    }
    Ok(energy(pred, grid)? / e_gt)
}

pub fn frame_metrics(pred: &RgbImage, gt: &RgbImage, op: &DiffuseOperator) -> Result<FrameMetrics> {
    let grid = op.grid();
    let d_pred = op.irradiance(pred)?;
    let d_gt = op.irradiance(gt)?;
    Ok(FrameMetrics {
        weighted_l1: weighted_l1(pred, gt, grid)?,
        weighted_l2: weighted_l2(pred, gt, grid)?,
        diffuse_l1: weighted_l1(&d_pred, &d_gt, grid)?,
        energy_ratio: energy_ratio(pred, gt, grid)?,
    })
}

/// Mean over consecutive frame pairs and lobes of the Euclidean distance
/// between realized parameter vectors `(μ, λ, u, n, c)`. Zero for fewer than
/// two frames.
pub fn jitter(frames: &[AsgMixture]) -> Result<f64> {
    if frames.len() < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for pair in frames.windows(2) {
        check_same_count(&pair[1], &pair[0])?;
        let (a, b) = (realized_lobes(&pair[0])?, realized_lobes(&pair[1])?);
        for (la, lb) in a.iter().zip(&b) {
            let d2: f64 = la.slots().iter().zip(lb.slots()).map(|(x, y)| (x - y) * (x - y)).sum();
            sum += d2.sqrt();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

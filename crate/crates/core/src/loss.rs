//! The composite objective `α·L_R + β·L_D + γ·L_T` and its gradient.
//!
//! `L_R` and `L_D` are solid-angle weighted sums over the sample grid; `L_T`
//! is the per-lobe normalized parameter drift against the previous frame's
//! fitted mixture and carries no pixel weight.

use serde::{Deserialize, Serialize};

use crate::asg::{check_same_count, AsgMixture, ParamGrad, RealizedGrad, RealizedLobe, RAW_PER_LOBE};
use crate::error::{Error, Result};
use crate::geometry::SampleGrid;
use crate::image::{EnvMap, RgbImage};
use crate::sh::DiffuseOperator;

/// Floor for the per-slot temporal normalizer.
pub const TEMPORAL_NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
        }
    }
}

/// Norm used for the reconstruction term. `L2` exists for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionNorm {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub diffuse: f64,
    pub temporal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(weights: &LossWeights, reconstruction: f64, diffuse: f64, temporal: f64) -> Self {
        LossBreakdown {
            reconstruction,
            diffuse,
            temporal,
            total: weights.alpha * reconstruction + weights.beta * diffuse + weights.gamma * temporal,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.reconstruction.is_finite()
            && self.diffuse.is_finite()
            && self.temporal.is_finite()
            && self.total.is_finite()
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn weighted_l1(pred: &RgbImage, gt: &RgbImage, grid: &SampleGrid) -> Result<(f64, RgbImage)> {
    pred.check_dims(grid.dims())?;
    gt.check_dims(grid.dims())?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(grid.len());
    for ((p, g), &w) in pred.data.iter().zip(&gt.data).zip(grid.weights()) {
        let mut row = 0.0;
        let mut gp = [0.0; 3];
        for ch in 0..3 {
            let diff = p[ch] - g[ch];
            row += diff.abs();
            gp[ch] = w * sign(diff);
        }
        loss += w * row;
        grad.push(gp);
    }
    Ok((
        loss,
        RgbImage {
            dims: grid.dims(),
            data: grad,
        },
    ))
}

fn weighted_l2(pred: &RgbImage, gt: &RgbImage, grid: &SampleGrid) -> Result<(f64, RgbImage)> {
    pred.check_dims(grid.dims())?;
    gt.check_dims(grid.dims())?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(grid.len());
    for ((p, g), &w) in pred.data.iter().zip(&gt.data).zip(grid.weights()) {
        let diff = [p[0] - g[0], p[1] - g[1], p[2] - g[2]];
        loss += w * (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]);
        grad.push(diff.map(|d| 2.0 * w * d));
    }
    Ok((
        loss,
        RgbImage {
            dims: grid.dims(),
            data: grad,
        },
    ))
}

/// `Σ_p w_p Σ_ch |pred − gt|` and its gradient `w_p · sign(pred − gt)`.
pub fn reconstruction_loss(pred: &RgbImage, gt: &RgbImage, grid: &SampleGrid) -> Result<(f64, RgbImage)> {
    weighted_l1(pred, gt, grid)
}

/// Reconstruction term under the chosen norm.
pub fn reconstruction_loss_with(
    norm: ReconstructionNorm,
    pred: &RgbImage,
    gt: &RgbImage,
    grid: &SampleGrid,
) -> Result<(f64, RgbImage)> {
    match norm {
        ReconstructionNorm::L1 => weighted_l1(pred, gt, grid),
        ReconstructionNorm::L2 => weighted_l2(pred, gt, grid),
    }
}

/// Weighted L1 distance between the diffuse map of `pred_env` and `d_gt`,
/// with the gradient taken with respect to `pred_env`.
pub fn diffuse_loss(pred_env: &RgbImage, d_gt: &RgbImage, op: &DiffuseOperator) -> Result<(f64, RgbImage)> {
    let d_pred = op.irradiance(pred_env)?;
    let (loss, upstream) = weighted_l1(&d_pred, d_gt, op.grid())?;
    Ok((loss, op.irradiance_backprop(&upstream)?))
}

/// Per-slot normalizers `max_i |g_{i,k}|` over the previous frame's lobes.
pub fn temporal_normalizers(previous: &[RealizedLobe]) -> [f64; RAW_PER_LOBE] {
    let mut norm = [TEMPORAL_NORM_FLOOR; RAW_PER_LOBE];
    for lobe in previous {
        for (n, v) in norm.iter_mut().zip(lobe.slots()) {
            *n = n.max(v.abs());
        }
    }
    norm
}

/// Temporal loss and its gradient in realized space.
pub(crate) fn temporal_realized(current: &[RealizedLobe], previous: &[RealizedLobe]) -> (f64, Vec<RealizedGrad>) {
    let norm = temporal_normalizers(previous);
    let mut loss = 0.0;
    let grads = current
        .iter()
        .zip(previous)
        .map(|(cur, prev)| {
            let (c, p) = (cur.slots(), prev.slots());
            let scaled: [f64; RAW_PER_LOBE] = std::array::from_fn(|k| (c[k] - p[k]) / norm[k]);
            let r = scaled.iter().map(|x| x * x).sum::<f64>().sqrt();
            loss += r;
            if r == 0.0 {
                return RealizedGrad::default();
            }
            let g: [f64; RAW_PER_LOBE] = std::array::from_fn(|k| scaled[k] / (norm[k] * r));
            RealizedGrad {
                mu: g[0],
                lambda: g[1],
                u: [g[2], g[3], g[4]].into(),
                n: [g[5], g[6], g[7]].into(),
                c: [g[8], g[9], g[10]].into(),
            }
        })
        .collect();
    (loss, grads)
}

/// `Σ_i ‖(g_i^t − g_i^{t−1}) / max_i |g_i^{t−1}|‖₂` over realized parameters,
/// with the gradient on `current`'s stored parameters. `previous` is frozen.
pub fn temporal_loss(current: &AsgMixture, previous: &AsgMixture) -> Result<(f64, Vec<ParamGrad>)> {
    check_same_count(current, previous)?;
    let cur = current.realize()?;
    let cur_lobes: Vec<RealizedLobe> = cur.lobes.iter().map(RealizedLobe::from_lobe).collect();
    let prev_lobes = crate::asg::realized_lobes(previous)?;
    let (loss, grads) = temporal_realized(&cur_lobes, &prev_lobes);
    Ok((loss, cur.backprop(&grads)))
}

/// Everything needed to evaluate the objective for one frame repeatedly.
#[derive(Debug, Clone)]
pub struct Objective {
    op: DiffuseOperator,
    gt: RgbImage,
    d_gt: RgbImage,
    pub weights: LossWeights,
    pub norm: ReconstructionNorm,
}

impl Objective {
    /// Precomputes the ground-truth diffuse map. The frame must already be on
    /// the grid.
    pub fn new(frame: &EnvMap, grid: &SampleGrid, weights: LossWeights, norm: ReconstructionNorm) -> Result<Self> {
        let op = DiffuseOperator::new(grid);
        Self::with_operator(frame, op, weights, norm)
    }

    /// Like [`Objective::new`] but reusing a prebuilt diffuse operator.
    pub fn with_operator(
        frame: &EnvMap,
        op: DiffuseOperator,
        weights: LossWeights,
        norm: ReconstructionNorm,
    ) -> Result<Self> {
        frame.image().check_dims(op.grid().dims())?;
        let gt = frame.image().clone();
        let d_gt = op.irradiance(&gt)?;
        Ok(Objective {
            op,
            gt,
            d_gt,
            weights,
            norm,
        })
    }

    pub fn grid(&self) -> &SampleGrid {
        self.op.grid()
    }

    pub fn ground_truth(&self) -> &RgbImage {
        &self.gt
    }

    pub fn diffuse_target(&self) -> &RgbImage {
        &self.d_gt
    }

    pub fn operator(&self) -> &DiffuseOperator {
        &self.op
    }

    /// Loss breakdown and gradient for every lobe's stored parameters.
    /// The temporal term is present iff `prev` is given and γ is nonzero.
    pub fn evaluate(&self, m: &AsgMixture, prev: Option<&AsgMixture>) -> Result<(LossBreakdown, Vec<ParamGrad>)> {
        let grid = self.op.grid();
        let realized = m.realize()?;
        let pred = realized.eval_grid(grid);
        let (recon, g_recon) = reconstruction_loss_with(self.norm, &pred, &self.gt, grid)?;
        let (diffuse, g_diffuse) = diffuse_loss(&pred, &self.d_gt, &self.op)?;

        let LossWeights { alpha, beta, gamma } = self.weights;
        let upstream = RgbImage {
            dims: grid.dims(),
            data: g_recon
                .data
                .iter()
                .zip(&g_diffuse.data)
                .map(|(r, d)| std::array::from_fn(|ch| alpha * r[ch] + beta * d[ch]))
                .collect(),
        };
        let mut grads = realized.accumulate_grid(grid, &upstream);

        let mut temporal = 0.0;
        if let Some(prev) = prev {
            check_same_count(m, prev)?;
            if gamma != 0.0 {
                let cur_lobes: Vec<RealizedLobe> = realized.lobes.iter().map(RealizedLobe::from_lobe).collect();
                let prev_lobes = crate::asg::realized_lobes(prev)?;
                let (t, t_grads) = temporal_realized(&cur_lobes, &prev_lobes);
                temporal = t;
                for (g, tg) in grads.iter_mut().zip(t_grads) {
                    *g += scale_realized(tg, gamma);
                }
            }
        }
        let breakdown = LossBreakdown::combine(&self.weights, recon, diffuse, temporal);
        if !breakdown.is_finite() {
            return Err(Error::NonFinite(format!("loss {breakdown:?}")));
        }
        Ok((breakdown, realized.backprop(&grads)))
    }

    /// Loss values only.
    pub fn breakdown(&self, m: &AsgMixture, prev: Option<&AsgMixture>) -> Result<LossBreakdown> {
        let grid = self.op.grid();
        let pred = m.realize()?.eval_grid(grid);
        let (recon, _) = reconstruction_loss_with(self.norm, &pred, &self.gt, grid)?;
        let d_pred = self.op.irradiance(&pred)?;
        let (diffuse, _) = weighted_l1(&d_pred, &self.d_gt, grid)?;
        let temporal = match prev {
            Some(prev) if self.weights.gamma != 0.0 => temporal_loss(m, prev)?.0,
            Some(prev) => {
                check_same_count(m, prev)?;
                0.0
            }
            None => 0.0,
        };
        Ok(LossBreakdown::combine(&self.weights, recon, diffuse, temporal))
    }
}

fn scale_realized(g: RealizedGrad, s: f64) -> RealizedGrad {
    RealizedGrad {
        mu: g.mu * s,
        lambda: g.lambda * s,
        u: g.u * s,
        n: g.n * s,
        c: g.c * s,
    }
}

/// One-shot composite loss for `m` against `frame`, whose diffuse target
/// `d_gt` was computed beforehand.
pub fn total_loss(
    m: &AsgMixture,
    frame: &EnvMap,
    d_gt: &RgbImage,
    prev: Option<&AsgMixture>,
    weights: LossWeights,
    grid: &SampleGrid,
) -> Result<(LossBreakdown, Vec<ParamGrad>)> {
    let op = DiffuseOperator::new(grid);
    frame.image().check_dims(grid.dims())?;
    d_gt.check_dims(grid.dims())?;
    let objective = Objective {
        op,
        gt: frame.image().clone(),
        d_gt: d_gt.clone(),
        weights,
        norm: ReconstructionNorm::L1,
    };
    objective.evaluate(m, prev)
}

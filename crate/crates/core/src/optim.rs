//! Adam, mixture initialization and the two-phase sequence fitter.
//!
//! Frame 0 starts from a deterministic spiral of lobes and runs
//! `epochs_first` full-grid steps without the temporal term. Every later frame
//! starts from the previous frame's result and runs `epochs_rest` steps with
//! the temporal term anchored to that (frozen) result.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asg::{AsgMixture, AsgParams, MAX_SHARPNESS, MIN_SHARPNESS, RAW_PER_LOBE};
use crate::error::{Error, Result};
use crate::geometry::{build_frame, reseed_tangent, GridDims, SampleGrid, Vec3};
use crate::image::EnvMap;
use crate::loss::{LossBreakdown, LossWeights, Objective, ReconstructionNorm};
use crate::resample::resample;
use crate::sh::DiffuseOperator;

/// Sharpness of freshly initialized lobes.
pub const INIT_SHARPNESS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub num_asgs: usize,
    pub grid_height: usize,
    pub epochs_first: usize,
    pub epochs_rest: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weights: LossWeights,
    #[serde(default)]
    pub loss: ReconstructionNorm,
    pub isotropic: bool,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            num_asgs: 15,
            grid_height: 256,
            epochs_first: 24_000,
            epochs_rest: 6_000,
            learning_rate: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weights: LossWeights::default(),
            loss: ReconstructionNorm::L1,
            isotropic: false,
            seed: 0,
            deterministic: false,
        }
    }
}

impl FitConfig {
    /// The small CI profile: 64×128 grid, 2000 / 500 epochs.
    pub fn desk(num_asgs: usize) -> Self {
        FitConfig {
            num_asgs,
            grid_height: 64,
            epochs_first: 2000,
            epochs_rest: 500,
            ..FitConfig::default()
        }
    }

    pub fn grid_dims(&self) -> GridDims {
        GridDims::with_height(self.grid_height)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Usage(msg.to_string()));
        if self.num_asgs == 0 {
            return bad("num_asgs must be positive");
        }
        if self.grid_height == 0 {
            return bad("grid_height must be positive");
        }
        if self.epochs_first == 0 || self.epochs_rest == 0 {
            return bad("epoch counts must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        let w = &self.weights;
        if !(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0) {
            return bad("loss weights must be nonnegative");
        }
        Ok(())
    }
}

/// First and second moment estimates per raw scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &FitConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::dims(params.len(), grads.len()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient slot {i} = {}", grads[i])));
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

/// Lobe axes on a golden-angle spiral over the upper hemisphere. Antipodal
/// axes describe the same lobe, so one hemisphere covers all orientations.
/// The first axis is always +Z; `seed` only rotates the spiral's azimuth.
pub fn spiral_axes(n: usize, seed: u64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let offset = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..2.0 * std::f64::consts::PI);
    (0..n)
        .map(|i| {
            let z = 1.0 - i as f64 / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = offset + golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Initial mixture for the first frame: spiral axes, moderate sharpness and
/// intensities that make the mixture's integrated energy match the frame's.
pub fn init_mixture(cfg: &FitConfig, frame0: &EnvMap) -> Result<AsgMixture> {
    if cfg.num_asgs == 0 {
        return Err(Error::Usage("cannot initialize a mixture with zero lobes".into()));
    }
    let grid = SampleGrid::new(frame0.dims())?;
    let mut energy = [0.0; 3];
    for (p, w) in frame0.pixels().iter().zip(grid.weights()) {
        for ch in 0..3 {
            energy[ch] += w * p[ch];
        }
    }
    // Unit-peak integral of one initial lobe.
    let unit = AsgParams::from_realized(
        INIT_SHARPNESS,
        INIT_SHARPNESS,
        Vec3::x(),
        Vec3::z(),
        Vec3::new(1.0, 1.0, 1.0),
    );
    let lobe_integral: f64 = AsgMixture::new(vec![unit])
        .realize()?
        .eval_grid(&grid)
        .data
        .iter()
        .zip(grid.weights())
        .map(|(e, w)| e[0] * w)
        .sum();
    let n = cfg.num_asgs as f64;
    let c = Vec3::from(energy.map(|e| (e / (n * lobe_integral)).max(1e-6)));
    Ok(AsgMixture::new(
        spiral_axes(cfg.num_asgs, cfg.seed)
            .into_iter()
            .map(|axis| AsgParams::from_realized(INIT_SHARPNESS, INIT_SHARPNESS, reseed_tangent(&axis), axis, c))
            .collect(),
    ))
}

/// One progress report per optimization step.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub frame: usize,
    pub epoch: usize,
    pub epochs: usize,
    pub loss: LossBreakdown,
}

/// Result of fitting one frame.
#[derive(Debug, Clone)]
pub struct FrameFit {
    pub mixture: AsgMixture,
    /// Loss at the start of every epoch.
    pub history: Vec<LossBreakdown>,
    /// Loss of the returned mixture.
    pub final_loss: LossBreakdown,
    pub reseeds: usize,
}

/// Repairs degenerate frames in place; returns how many lobes were touched.
fn repair_frames(m: &mut AsgMixture) -> usize {
    let mut count = 0;
    for (i, p) in m.lobes.iter_mut().enumerate() {
        if build_frame(&p.u_raw, &p.n_raw).is_ok() {
            continue;
        }
        if p.n_raw.norm() <= crate::geometry::FRAME_EPS || !p.n_raw.iter().all(|v| v.is_finite()) {
            warn!("lobe {i}: axis seed collapsed, resetting to +Z");
            p.n_raw = Vec3::z();
        }
        p.u_raw = reseed_tangent(&p.n_raw) * p.u_raw.norm().max(1.0);
        debug!("lobe {i}: re-seeded tangent");
        count += 1;
    }
    count
}

fn tie_isotropic(m: &mut AsgMixture) {
    for p in &mut m.lobes {
        p.log_lambda = p.log_mu;
    }
}

fn project_sharpness(raw: &mut [f64]) {
    let (lo, hi) = (MIN_SHARPNESS.ln(), MAX_SHARPNESS.ln());
    for lobe in raw.chunks_exact_mut(RAW_PER_LOBE) {
        lobe[0] = lobe[0].clamp(lo, hi);
        lobe[1] = lobe[1].clamp(lo, hi);
    }
}

/// Brings `frame` onto the configured grid.
pub fn prepare_frame(frame: &EnvMap, cfg: &FitConfig) -> Result<EnvMap> {
    resample(frame, cfg.grid_dims())
}

/// Runs `epochs` full-grid Adam steps from `init`.
pub fn optimize(
    objective: &Objective,
    init: &AsgMixture,
    prev: Option<&AsgMixture>,
    cfg: &FitConfig,
    epochs: usize,
    frame_index: usize,
    observer: &mut dyn FnMut(&Progress),
) -> Result<FrameFit> {
    let mut mixture = init.clone();
    if cfg.isotropic {
        tie_isotropic(&mut mixture);
    }
    let mut state = AdamState::new(mixture.raw_len());
    let mut history = Vec::with_capacity(epochs);
    let mut reseeds = 0;
    let mut grad_raw = vec![0.0; mixture.raw_len()];
    for epoch in 0..epochs {
        reseeds += repair_frames(&mut mixture);
        let (loss, grads) = objective.evaluate(&mixture, prev)?;
        history.push(loss);
        observer(&Progress {
            frame: frame_index,
            epoch,
            epochs,
            loss,
        });
        for (g, chunk) in grads.iter().zip(grad_raw.chunks_exact_mut(RAW_PER_LOBE)) {
            g.write_raw(chunk);
            if cfg.isotropic {
                chunk[0] += chunk[1];
                chunk[1] = 0.0;
            }
        }
        let mut raw = mixture.to_raw();
        adam_step(&mut raw, &grad_raw, &mut state, cfg)
            .map_err(|e| Error::NonFinite(format!("frame {frame_index}, epoch {epoch}: {e}")))?;
        project_sharpness(&mut raw);
        mixture = AsgMixture::from_raw(&raw);
        if cfg.isotropic {
            tie_isotropic(&mut mixture);
        }
    }
    reseeds += repair_frames(&mut mixture);
    let final_loss = objective.breakdown(&mixture, prev)?;
    Ok(FrameFit {
        mixture,
        history,
        final_loss,
        reseeds,
    })
}

/// Fits one frame. Runs `epochs_first` steps without a previous mixture and
/// `epochs_rest` steps with one.
pub fn fit_frame(frame: &EnvMap, init: &AsgMixture, prev: Option<&AsgMixture>, cfg: &FitConfig) -> Result<FrameFit> {
    fit_frame_with(frame, init, prev, cfg, &mut |_| {})
}

pub fn fit_frame_with(
    frame: &EnvMap,
    init: &AsgMixture,
    prev: Option<&AsgMixture>,
    cfg: &FitConfig,
    observer: &mut dyn FnMut(&Progress),
) -> Result<FrameFit> {
    cfg.validate()?;
    let frame = prepare_frame(frame, cfg)?;
    let grid = SampleGrid::new(cfg.grid_dims())?;
    let objective = Objective::new(&frame, &grid, cfg.weights, cfg.loss)?;
    let epochs = if prev.is_some() {
        cfg.epochs_rest
    } else {
        cfg.epochs_first
    };
    optimize(&objective, init, prev, cfg, epochs, 0, observer)
}

/// A frame that could not be fitted.
#[derive(Debug)]
pub struct FrameFailure {
    pub frame: usize,
    pub error: Error,
}

/// Per-frame results. When `failure` is set, `frames` holds every frame fitted
/// before it.
#[derive(Debug)]
pub struct SequenceFit {
    pub frames: Vec<FrameFit>,
    pub failure: Option<FrameFailure>,
}

impl SequenceFit {
    pub fn mixtures(&self) -> Vec<AsgMixture> {
        self.frames.iter().map(|f| f.mixture.clone()).collect()
    }

    pub fn into_result(self) -> Result<Vec<FrameFit>> {
        match self.failure {
            Some(f) => Err(f.error),
            None => Ok(self.frames),
        }
    }
}

pub fn fit_sequence(frames: &[EnvMap], cfg: &FitConfig) -> Result<SequenceFit> {
    fit_sequence_with(frames, cfg, &mut |_| {})
}

/// Fits every frame in order, warm-starting each from its predecessor.
/// Configuration and input errors are returned directly; a numeric failure
/// mid-sequence stops the run and is reported in [`SequenceFit::failure`].
pub fn fit_sequence_with(
    frames: &[EnvMap],
    cfg: &FitConfig,
    observer: &mut dyn FnMut(&Progress),
) -> Result<SequenceFit> {
    cfg.validate()?;
    let Some(first) = frames.first() else {
        return Err(Error::Usage("no frames to fit".into()));
    };
    if let Some(bad) = frames.iter().position(|f| f.dims() != first.dims()) {
        return Err(Error::dims(
            first.dims(),
            format!("{} (frame {bad})", frames[bad].dims()),
        ));
    }
    let grid = SampleGrid::new(cfg.grid_dims())?;
    let op = DiffuseOperator::new(&grid);
    let mut out: Vec<FrameFit> = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let result = prepare_frame(frame, cfg)
            .and_then(|f| Objective::with_operator(&f, op.clone(), cfg.weights, cfg.loss).map(|o| (f, o)))
            .and_then(|(f, objective)| match out.last() {
                None => {
                    let init = init_mixture(cfg, &f)?;
                    optimize(&objective, &init, None, cfg, cfg.epochs_first, t, observer)
                }
                Some(prev) => {
                    let prev = &prev.mixture;
                    optimize(&objective, prev, Some(prev), cfg, cfg.epochs_rest, t, observer)
                }
            });
        match result {
            Ok(fit) => {
                if fit.reseeds > 0 {
                    warn!("frame {t}: {} tangent re-seeds", fit.reseeds);
                }
                out.push(fit);
            }
            Err(error) => {
                return Ok(SequenceFit {
                    frames: out,
                    failure: Some(FrameFailure { frame: t, error }),
                })
            }
        }
    }
    Ok(SequenceFit {
        frames: out,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RgbImage;

    fn cfg() -> FitConfig {
        FitConfig {
            learning_rate: 0.01,
            ..FitConfig::desk(3)
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let c = cfg();
        let mut p = vec![1.0, -2.0, 0.5];
        let g = [3.0, -0.001, 1e3];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &g, &mut s, &c).unwrap();
        for (new, old) in p.iter().zip([1.0, -2.0, 0.5]) {
            assert!(((new - old).abs() - c.learning_rate).abs() < 1e-6);
        }
        assert!(p[0] < 1.0 && p[1] > -2.0);
    }

    #[test]
    fn zero_gradient_never_moves() {
        let c = cfg();
        let mut p = vec![0.3, 0.7];
        let mut s = AdamState::new(2);
        for _ in 0..100 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, &c).unwrap();
        }
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn adam_minimizes_square() {
        // Scalar reference Adam, written out longhand.
        let c = cfg();
        let (mut x_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        let mut best = f64::INFINITY;
        for t in 1..=200 {
            let g = 2.0 * x_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x_ref -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            let g = [2.0 * p[0]];
            adam_step(&mut p, &g, &mut s, &c).unwrap();
            assert!((p[0] - x_ref).abs() < 1e-12);
            best = best.min(p[0] * p[0]);
        }
        assert!(p[0].abs() < 0.5);
        assert!(best < 0.25);
    }

    #[test]
    fn non_finite_gradient_fails_loudly() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut s, &cfg()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn spiral_starts_at_zenith() {
        for seed in [0, 7] {
            let axes = spiral_axes(1, seed);
            assert_eq!(axes, vec![Vec3::z()]);
        }
        let axes = spiral_axes(15, 3);
        assert!(axes.iter().all(|a| (a.norm() - 1.0).abs() < 1e-12 && a.z > 0.0));
    }

    #[test]
    fn init_matches_energy_and_is_deterministic() {
        let dims = GridDims::with_height(32);
        let env = EnvMap::new(RgbImage::from_fn(dims, |x, y| {
            [1.0 + (x % 5) as f64, 0.2 * y as f64, 3.0]
        }))
        .unwrap();
        let grid = SampleGrid::new(dims).unwrap();
        let c = FitConfig { num_asgs: 7, ..cfg() };
        let m = init_mixture(&c, &env).unwrap();
        assert_eq!(m, init_mixture(&c, &env).unwrap());
        let pred = m.realize().unwrap().eval_grid(&grid);
        for ch in 0..3 {
            let e_pred: f64 = pred.data.iter().zip(grid.weights()).map(|(p, w)| p[ch] * w).sum();
            let e_gt: f64 = env.pixels().iter().zip(grid.weights()).map(|(p, w)| p[ch] * w).sum();
            assert!(
                e_pred > 0.5 * e_gt && e_pred < 2.0 * e_gt,
                "ch {ch}: {e_pred} vs {e_gt}"
            );
        }
        assert!(init_mixture(&FitConfig { num_asgs: 0, ..c }, &env).is_err());
    }

    #[test]
    fn degenerate_frames_are_repaired() {
        let mut m = AsgMixture::new(vec![AsgParams::from_realized(
            1.0,
            1.0,
            Vec3::z() * 2.0,
            Vec3::z(),
            Vec3::new(1.0, 1.0, 1.0),
        )]);
        assert_eq!(repair_frames(&mut m), 1);
        assert!(m.lobes[0].frame().is_ok());
        assert_eq!(repair_frames(&mut m), 0);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig {
            learning_rate: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(FitConfig {
            adam_beta2: 1.0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(FitConfig {
            epochs_rest: 0,
            ..cfg()
        }
        .validate()
        .is_err());
        let d = FitConfig::default();
        assert_eq!((d.grid_height, d.epochs_first, d.epochs_rest), (256, 24_000, 6_000));
        assert_eq!((d.weights.alpha, d.weights.beta, d.weights.gamma), (1.0, 1.0, 0.5));
    }
}

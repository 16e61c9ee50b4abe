//! Anisotropic spherical Gaussian lobes in Bingham form and their mixtures.
//!
//! A lobe evaluates to `c · exp(-μ (d·u)² - λ (d·v)²)`, peaking at the lobe
//! axis `n` (and, the form being antipodally symmetric, at `-n`). Parameters
//! are stored unconstrained: log-sharpness, log-intensity and raw frame seeds
//! that are orthonormalized on every evaluation. Gradients are propagated back
//! to exactly these stored values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_frame_traced, Direction, Frame, FrameBuild, SampleGrid, Vec3};
use crate::image::{Rgb, RgbImage};

pub const MIN_SHARPNESS: f64 = 1e-3;
pub const MAX_SHARPNESS: f64 = 1e4;

/// Number of raw scalars per lobe: log μ, log λ, u seed (3), n seed (3), log c (3).
pub const RAW_PER_LOBE: usize = 11;

/// One lobe's optimizable state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsgParams {
    pub log_mu: f64,
    pub log_lambda: f64,
    pub u_raw: Vec3,
    pub n_raw: Vec3,
    pub log_c: Vec3,
}

impl AsgParams {
    /// Builds stored parameters from realized values. Zero intensities map to
    /// the smallest positive log so the result stays finite.
    pub fn from_realized(mu: f64, lambda: f64, u: Vec3, n: Vec3, c: Vec3) -> Self {
        AsgParams {
            log_mu: mu.ln(),
            log_lambda: lambda.ln(),
            u_raw: u,
            n_raw: n,
            log_c: c.map(|x| x.max(f64::MIN_POSITIVE).ln()),
        }
    }

    pub fn mu(&self) -> f64 {
        clamp_sharpness(self.log_mu.exp())
    }

    pub fn lambda(&self) -> f64 {
        clamp_sharpness(self.log_lambda.exp())
    }

    pub fn c(&self) -> Vec3 {
        self.log_c.map(f64::exp)
    }

    pub fn frame(&self) -> Result<Frame> {
        Ok(build_frame_traced(&self.u_raw, &self.n_raw)?.frame)
    }

    pub fn realize(&self) -> Result<Lobe> {
        Ok(Lobe::from_build(self, build_frame_traced(&self.u_raw, &self.n_raw)?))
    }

    pub fn write_raw(&self, out: &mut [f64]) {
        out[0] = self.log_mu;
        out[1] = self.log_lambda;
        out[2..5].copy_from_slice(self.u_raw.as_slice());
        out[5..8].copy_from_slice(self.n_raw.as_slice());
        out[8..11].copy_from_slice(self.log_c.as_slice());
    }

    pub fn read_raw(raw: &[f64]) -> Self {
        AsgParams {
            log_mu: raw[0],
            log_lambda: raw[1],
            u_raw: Vec3::from_column_slice(&raw[2..5]),
            n_raw: Vec3::from_column_slice(&raw[5..8]),
            log_c: Vec3::from_column_slice(&raw[8..11]),
        }
    }
}

#[inline]
fn clamp_sharpness(s: f64) -> f64 {
    s.clamp(MIN_SHARPNESS, MAX_SHARPNESS)
}

#[inline]
fn sharpness_in_range(s: f64) -> bool {
    (MIN_SHARPNESS..=MAX_SHARPNESS).contains(&s)
}

/// A lobe with realized (constrained) parameters, ready to evaluate.
#[derive(Debug, Clone, Copy)]
pub struct Lobe {
    pub mu: f64,
    pub lambda: f64,
    pub frame: Frame,
    pub c: Vec3,
    // Unclamped sharpness, for the clamp's zero derivative.
    mu_raw: f64,
    lambda_raw: f64,
    u_raw: Vec3,
    n_len: f64,
    u_perp_len: f64,
}

impl Lobe {
    fn from_build(p: &AsgParams, build: FrameBuild) -> Self {
        let (mu_raw, lambda_raw) = (p.log_mu.exp(), p.log_lambda.exp());
        Lobe {
            mu: clamp_sharpness(mu_raw),
            lambda: clamp_sharpness(lambda_raw),
            frame: build.frame,
            c: p.c(),
            mu_raw,
            lambda_raw,
            u_raw: p.u_raw,
            n_len: build.n_len,
            u_perp_len: build.u_perp_len,
        }
    }

    /// The unit-peak shape `exp(-μ a² - λ b²)` along with `a = d·u`, `b = d·v`.
    #[inline]
    fn shape(&self, d: &Vec3) -> (f64, f64, f64) {
        let a = d.dot(&self.frame.u);
        let b = d.dot(&self.frame.v);
        ((-self.mu * a * a - self.lambda * b * b).exp(), a, b)
    }

    #[inline]
    pub fn eval(&self, d: &Direction) -> Rgb {
        let (e, _, _) = self.shape(d.vec());
        [self.c.x * e, self.c.y * e, self.c.z * e]
    }

    /// Adds this lobe's contribution at `d`, weighted by `upstream`, to `acc`.
    #[inline]
    fn accumulate(&self, d: &Vec3, upstream: &Rgb, acc: &mut LobeAccum) {
        let (e, a, b) = self.shape(d);
        let ue = [upstream[0] * e, upstream[1] * e, upstream[2] * e];
        let s = ue[0] * self.c.x + ue[1] * self.c.y + ue[2] * self.c.z;
        acc.upstream_shape[0] += ue[0];
        acc.upstream_shape[1] += ue[1];
        acc.upstream_shape[2] += ue[2];
        let (sa, sb) = (s * a, s * b);
        acc.s_aa += sa * a;
        acc.s_bb += sb * b;
        acc.a_dir += d * sa;
        acc.b_dir += d * sb;
    }

    /// Realized-space gradient of the accumulated objective.
    fn realized_grad(&self, acc: &LobeAccum) -> RealizedGrad {
        let Frame { u, n, .. } = self.frame;
        RealizedGrad {
            mu: -acc.s_aa,
            lambda: -acc.s_bb,
            u: -2.0 * self.mu * acc.a_dir - 2.0 * self.lambda * acc.b_dir.cross(&n),
            n: -2.0 * self.lambda * u.cross(&acc.b_dir),
            c: Vec3::from(acc.upstream_shape),
        }
    }

    /// Chain rule from realized quantities back to the stored parameters.
    pub fn backprop(&self, g: &RealizedGrad) -> ParamGrad {
        let Frame { u, n, .. } = self.frame;
        let d_log_mu = if sharpness_in_range(self.mu_raw) {
            g.mu * self.mu
        } else {
            0.0
        };
        let d_log_lambda = if sharpness_in_range(self.lambda_raw) {
            g.lambda * self.lambda
        } else {
            0.0
        };
        // u = normalize(u_perp), u_perp = u_raw - (u_raw·n) n
        let g_perp = (g.u - u * g.u.dot(&u)) / self.u_perp_len;
        let g_perp_n = g_perp.dot(&n);
        let u_raw = g_perp - n * g_perp_n;
        let g_n = g.n - self.u_raw * g_perp_n - g_perp * self.u_raw.dot(&n);
        // n = normalize(n_raw)
        let n_raw = (g_n - n * g_n.dot(&n)) / self.n_len;
        ParamGrad {
            log_mu: d_log_mu,
            log_lambda: d_log_lambda,
            u_raw,
            n_raw,
            log_c: g.c.component_mul(&self.c),
        }
    }
}

/// Per-lobe sufficient statistics for the gradient of `Σ_p upstream_p · G(d_p)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LobeAccum {
    upstream_shape: [f64; 3],
    s_aa: f64,
    s_bb: f64,
    a_dir: Vec3,
    b_dir: Vec3,
}

impl LobeAccum {
    fn add(&mut self, o: &LobeAccum) {
        for ch in 0..3 {
            self.upstream_shape[ch] += o.upstream_shape[ch];
        }
        self.s_aa += o.s_aa;
        self.s_bb += o.s_bb;
        self.a_dir += o.a_dir;
        self.b_dir += o.b_dir;
    }
}

/// Gradient with respect to the realized lobe quantities μ, λ, unit u, unit n
/// and c. The bi-tangent is derived (`v = n × u`), so its influence is folded
/// into `u` and `n`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RealizedGrad {
    pub mu: f64,
    pub lambda: f64,
    pub u: Vec3,
    pub n: Vec3,
    pub c: Vec3,
}

impl std::ops::AddAssign for RealizedGrad {
    fn add_assign(&mut self, o: RealizedGrad) {
        self.mu += o.mu;
        self.lambda += o.lambda;
        self.u += o.u;
        self.n += o.n;
        self.c += o.c;
    }
}

/// Gradient with respect to the stored fields of [`AsgParams`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamGrad {
    pub log_mu: f64,
    pub log_lambda: f64,
    pub u_raw: Vec3,
    pub n_raw: Vec3,
    pub log_c: Vec3,
}

impl ParamGrad {
    pub fn write_raw(&self, out: &mut [f64]) {
        out[0] = self.log_mu;
        out[1] = self.log_lambda;
        out[2..5].copy_from_slice(self.u_raw.as_slice());
        out[5..8].copy_from_slice(self.n_raw.as_slice());
        out[8..11].copy_from_slice(self.log_c.as_slice());
    }

    pub fn is_finite(&self) -> bool {
        self.log_mu.is_finite()
            && self.log_lambda.is_finite()
            && self.u_raw.iter().all(|x| x.is_finite())
            && self.n_raw.iter().all(|x| x.is_finite())
            && self.log_c.iter().all(|x| x.is_finite())
    }
}

impl std::ops::AddAssign for ParamGrad {
    fn add_assign(&mut self, o: ParamGrad) {
        self.log_mu += o.log_mu;
        self.log_lambda += o.log_lambda;
        self.u_raw += o.u_raw;
        self.n_raw += o.n_raw;
        self.log_c += o.log_c;
    }
}

pub fn eval_lobe(p: &AsgParams, d: &Direction) -> Result<Rgb> {
    Ok(p.realize()?.eval(d))
}

/// Exact gradient of `Σ_ch upstream_ch · G(d)_ch` with respect to `p`'s stored fields.
pub fn lobe_gradients(p: &AsgParams, d: &Direction, upstream: &Rgb) -> Result<ParamGrad> {
    let lobe = p.realize()?;
    let mut acc = LobeAccum::default();
    lobe.accumulate(d.vec(), upstream, &mut acc);
    Ok(lobe.backprop(&lobe.realized_grad(&acc)))
}

/// A fixed-size, ordered set of lobes describing one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AsgMixture {
    pub lobes: Vec<AsgParams>,
}

impl AsgMixture {
    pub fn new(lobes: Vec<AsgParams>) -> Self {
        AsgMixture { lobes }
    }

    pub fn len(&self) -> usize {
        self.lobes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lobes.is_empty()
    }

    pub fn realize(&self) -> Result<RealizedMixture> {
        Ok(RealizedMixture {
            lobes: self.lobes.iter().map(AsgParams::realize).collect::<Result<_>>()?,
        })
    }

    pub fn raw_len(&self) -> usize {
        self.lobes.len() * RAW_PER_LOBE
    }

    pub fn to_raw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.raw_len()];
        for (lobe, chunk) in self.lobes.iter().zip(out.chunks_exact_mut(RAW_PER_LOBE)) {
            lobe.write_raw(chunk);
        }
        out
    }

    pub fn from_raw(raw: &[f64]) -> Self {
        AsgMixture {
            lobes: raw.chunks_exact(RAW_PER_LOBE).map(AsgParams::read_raw).collect(),
        }
    }
}

pub fn eval_mixture(m: &AsgMixture, d: &Direction) -> Result<Rgb> {
    Ok(m.realize()?.eval(d))
}

pub fn eval_mixture_batch(m: &AsgMixture, grid: &SampleGrid) -> Result<RgbImage> {
    Ok(m.realize()?.eval_grid(grid))
}

/// Rows handled per parallel work item. Reductions always combine these
/// partial sums in row order, so results do not depend on scheduling.
const ROWS_PER_CHUNK: usize = 4;

/// A mixture whose lobes have been realized once for repeated evaluation.
#[derive(Debug, Clone)]
pub struct RealizedMixture {
    pub lobes: Vec<Lobe>,
}

impl RealizedMixture {
    #[inline]
    pub fn eval(&self, d: &Direction) -> Rgb {
        self.eval_vec(d.vec())
    }

    #[inline]
    fn eval_vec(&self, d: &Vec3) -> Rgb {
        let mut out = [0.0; 3];
        for lobe in &self.lobes {
            let (e, _, _) = lobe.shape(d);
            out[0] += lobe.c.x * e;
            out[1] += lobe.c.y * e;
            out[2] += lobe.c.z * e;
        }
        out
    }

    pub fn eval_grid(&self, grid: &SampleGrid) -> RgbImage {
        let mut data = vec![[0.0; 3]; grid.len()];
        let chunk = ROWS_PER_CHUNK * grid.width();
        data.par_chunks_mut(chunk)
            .zip(grid.directions().par_chunks(chunk))
            .for_each(|(out, dirs)| {
                for (o, d) in out.iter_mut().zip(dirs) {
                    *o = self.eval_vec(d.vec());
                }
            });
        RgbImage {
            dims: grid.dims(),
            data,
        }
    }

    /// Gradient of `Σ_p upstream_p · I_pred(d_p)` with respect to every lobe's
    /// realized quantities.
    pub fn accumulate_grid(&self, grid: &SampleGrid, upstream: &RgbImage) -> Vec<RealizedGrad> {
        let chunk = ROWS_PER_CHUNK * grid.width();
        let partials: Vec<Vec<LobeAccum>> = grid
            .directions()
            .par_chunks(chunk)
            .zip(upstream.data.par_chunks(chunk))
            .map(|(dirs, ups)| {
                let mut acc = vec![LobeAccum::default(); self.lobes.len()];
                for (d, up) in dirs.iter().zip(ups) {
                    if up[0] == 0.0 && up[1] == 0.0 && up[2] == 0.0 {
                        continue;
                    }
                    for (lobe, a) in self.lobes.iter().zip(acc.iter_mut()) {
                        lobe.accumulate(d.vec(), up, a);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![LobeAccum::default(); self.lobes.len()];
        for part in &partials {
            for (t, p) in total.iter_mut().zip(part) {
                t.add(p);
            }
        }
        self.lobes
            .iter()
            .zip(&total)
            .map(|(lobe, acc)| lobe.realized_grad(acc))
            .collect()
    }

    /// Converts per-lobe realized gradients to stored-parameter gradients.
    pub fn backprop(&self, grads: &[RealizedGrad]) -> Vec<ParamGrad> {
        self.lobes.iter().zip(grads).map(|(lobe, g)| lobe.backprop(g)).collect()
    }
}

/// Realized per-lobe values as they appear in parameter files and in the
/// temporal comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedLobe {
    pub mu: f64,
    pub lambda: f64,
    pub u: [f64; 3],
    pub n: [f64; 3],
    pub c: [f64; 3],
}

impl RealizedLobe {
    pub fn from_lobe(l: &Lobe) -> Self {
        RealizedLobe {
            mu: l.mu,
            lambda: l.lambda,
            u: l.frame.u.into(),
            n: l.frame.n.into(),
            c: l.c.into(),
        }
    }

    /// The 11 realized scalars in slot order μ, λ, u, n, c.
    pub fn slots(&self) -> [f64; RAW_PER_LOBE] {
        let mut s = [0.0; RAW_PER_LOBE];
        s[0] = self.mu;
        s[1] = self.lambda;
        s[2..5].copy_from_slice(&self.u);
        s[5..8].copy_from_slice(&self.n);
        s[8..11].copy_from_slice(&self.c);
        s
    }

    pub fn to_params(&self) -> AsgParams {
        AsgParams::from_realized(
            self.mu,
            self.lambda,
            Vec3::from(self.u),
            Vec3::from(self.n),
            Vec3::from(self.c),
        )
    }
}

/// Realized parameters of every lobe.
pub fn realized_lobes(m: &AsgMixture) -> Result<Vec<RealizedLobe>> {
    Ok(m.realize()?.lobes.iter().map(RealizedLobe::from_lobe).collect())
}

/// Mixture built from realized values, e.g. read back from a parameter file.
pub fn mixture_from_realized(lobes: &[RealizedLobe]) -> AsgMixture {
    AsgMixture::new(lobes.iter().map(RealizedLobe::to_params).collect())
}

pub(crate) fn check_same_count(a: &AsgMixture, b: &AsgMixture) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!("lobe count mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

//! Reverse-time integrators for bridge fields.
//!
//! All integrators share one time grid: `steps` uniform Euler steps on
//! `[clip, 1 - clip]`, plus one closing step of length `clip` down to `t = 0`
//! when `clip > 0`. The first state is the endpoint itself. With `clip = 0` the
//! grid is the plain uniform grid on `[0, 1]` with `tau = 1 / steps`.
//!
//! Per step (reverse direction, `dt < 0`):
//!
//! ```text
//! d      = v_u + s (v_c - v_u)         if s > 1 and t in the guidance window
//!        = v_c                         otherwise
//! z'     = z + dt d                    (ODE)
//! z'     = z + dt (d - g s) + sqrt(2 g |dt|) xi     (SDE)
//! ```
//!
//! `translate` additionally carries the source trajectory and the mixed
//! trajectory driven by `d_i + eta_t (d_j - d_i)` with `eta_t = (1 - t) [t > t_end]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, invalid, Error, Result};
use crate::field::{FieldOutput, VelocityField};
use crate::math;
use crate::rng::{self, BridgeRng};
use crate::schedule::CLIP;

/// Diffusion coefficient `g_t` of the reverse SDE.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum Diffusion {
    Constant(f64),
    /// Piecewise-linear `(t, g)` knots, held constant outside the knot range.
    Piecewise(Vec<[f64; 2]>),
}

impl Default for Diffusion {
    fn default() -> Self {
        Diffusion::Constant(0.0)
    }
}

impl Diffusion {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Diffusion::Constant(g) => *g,
            Diffusion::Piecewise(knots) => {
                let Some(first) = knots.first() else {
                    return 0.0;
                };
                if t <= first[0] {
                    return first[1];
                }
                for w in knots.windows(2) {
                    let ([t0, g0], [t1, g1]) = (w[0], w[1]);
                    if t <= t1 {
                        let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                        return g0 + s * (g1 - g0);
                    }
                }
                knots[knots.len() - 1][1]
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Diffusion::Constant(g) => *g == 0.0,
            Diffusion::Piecewise(k) => k.iter().all(|p| p[1] == 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Diffusion::Constant(g) => *g >= 0.0 && g.is_finite(),
            Diffusion::Piecewise(k) => {
                k.iter().all(|p| p[1] >= 0.0 && p[1].is_finite()) && k.windows(2).all(|w| w[0][0] <= w[1][0])
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("diffusion", "g must be finite, nonnegative, with sorted knots"))
        }
    }
}

/// How the closing step from `t = clip` to `t = 0` is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FinalStep {
    /// Plain Euler (or Euler-Maruyama) step.
    Euler,
    /// Jump to the field's posterior mean `E[z_0 | z_clip, z_T]` when it reports one.
    #[default]
    PosteriorMean,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SamplerConfig {
    pub steps: usize,
    pub clip: f64,
    /// Guidance scale `s`; guidance is active only for `s > 1`.
    pub guidance: f64,
    pub cfg_window: [f64; 2],
    /// Mixed-drift cutoff; `1` disables mixing.
    pub t_end: f64,
    pub diffusion: Diffusion,
    pub final_step: FinalStep,
    /// Reverse integration starts here instead of `1 - clip` when set.
    pub start_time: Option<f64>,
    pub seed: u64,
    pub record_drifts: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 256,
            clip: CLIP,
            guidance: 1.0,
            cfg_window: [0.0, 1.0],
            t_end: 1.0,
            diffusion: Diffusion::Constant(0.0),
            final_step: FinalStep::PosteriorMean,
            start_time: None,
            seed: 0,
            record_drifts: false,
        }
    }
}

impl SamplerConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("steps", "need at least one step"));
        }
        if !(0.0..0.5).contains(&self.clip) {
            return Err(invalid("clip", "must lie in [0, 0.5)"));
        }
        if !(0.0..=1.0).contains(&self.t_end) {
            return Err(invalid("t_end", "must lie in [0, 1]"));
        }
        if !(self.guidance >= 0.0) {
            return Err(invalid("guidance", "must be nonnegative"));
        }
        if let Some(ts) = self.start_time {
            if !(ts > self.clip && ts <= 1.0 - self.clip) {
                return Err(invalid("start_time", "must lie in (clip, 1 - clip]"));
            }
        }
        self.diffusion.validate()
    }

    /// Strictly decreasing time points, first to last (`steps + 1` or `steps + 2` points).
    pub fn reverse_grid(&self) -> Vec<f64> {
        let hi = self.start_time.unwrap_or(1.0 - self.clip);
        let lo = self.clip;
        let n = self.steps;
        let mut grid: Vec<f64> = (0..=n).map(|k| hi - (hi - lo) * (k as f64) / (n as f64)).collect();
        grid[n] = lo;
        if self.clip > 0.0 {
            grid.push(0.0);
        }
        grid
    }

    /// Strictly increasing time points for inversion, ending at `1 - clip`.
    pub fn forward_grid(&self) -> Vec<f64> {
        let lo = self.clip;
        let hi = 1.0 - self.clip;
        let n = self.steps;
        let mut grid = Vec::with_capacity(n + 2);
        if self.clip > 0.0 {
            grid.push(0.0);
        }
        grid.extend((0..=n).map(|k| lo + (hi - lo) * (k as f64) / (n as f64)));
        *grid.last_mut().expect("nonempty") = hi;
        grid
    }

    /// Nominal uniform step `tau` of the interior grid.
    pub fn tau(&self) -> f64 {
        let hi = self.start_time.unwrap_or(1.0 - self.clip);
        (hi - self.clip) / self.steps as f64
    }

    pub fn guidance_on(&self, t: f64) -> bool {
        self.guidance > 1.0 && t >= self.cfg_window[0] && t <= self.cfg_window[1]
    }
}

/// Ordered states of one integration, starting at the endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<(f64, Vec<f64>)>,
    pub endpoint: Vec<f64>,
    /// Drift used on each step, when recording was requested.
    pub drifts: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        &self.states.last().expect("trajectory has states").1
    }

    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|(t, _)| *t).collect()
    }
}

/// `eta_t = (1 - t) [t > t_end]`.
pub fn mixing_coefficient(t: f64, t_end: f64) -> f64 {
    if t > t_end {
        1.0 - t
    } else {
        0.0
    }
}

/// `d_i + eta (d_j - d_i)`.
pub fn mixed_drift(target: &[f64], source: &[f64], eta: f64) -> Vec<f64> {
    target.iter().zip(source).map(|(di, dj)| di + eta * (dj - di)).collect()
}

/// Classifier-free guidance combination `v_u + s (v_c - v_u)`.
pub fn cfg_combine(uncond: &[f64], cond: &[f64], scale: f64) -> Vec<f64> {
    uncond.iter().zip(cond).map(|(u, c)| u + scale * (c - u)).collect()
}

/// Guided field evaluation following the guidance gate.
///
/// When guidance is on, the unconditional branch uses a zeroed condition vector.
/// The score and posterior mean are combined with the same weights as the velocity.
pub fn eval_guided<F: VelocityField + ?Sized>(
    field: &F,
    t: f64,
    z: &[f64],
    endpoint: &[f64],
    condition: Option<&[f64]>,
    scale: f64,
    window: [f64; 2],
) -> Result<FieldOutput> {
    let cond = field.evaluate(t, z, endpoint, condition)?;
    let on = scale > 1.0 && t >= window[0] && t <= window[1];
    let Some(c) = condition.filter(|_| on) else {
        return Ok(cond);
    };
    let zeros = vec![0.0; c.len()];
    let uncond = field.evaluate(t, z, endpoint, Some(&zeros))?;
    let mix = |u: &Option<Vec<f64>>, c: &Option<Vec<f64>>| match (u, c) {
        (Some(u), Some(c)) => Some(cfg_combine(u, c, scale)),
        _ => None,
    };
    Ok(FieldOutput {
        velocity: cfg_combine(&uncond.velocity, &cond.velocity, scale),
        score: mix(&uncond.score, &cond.score),
        posterior_mean: mix(&uncond.posterior_mean, &cond.posterior_mean),
        noise_mean: mix(&uncond.noise_mean, &cond.noise_mean),
    })
}

struct StepIo<'a> {
    rng: Option<&'a mut BridgeRng>,
}

/// One reverse step from `grid[k]` to `grid[k + 1]`; returns the drift used.
#[allow(clippy::too_many_arguments)]
fn reverse_step<F: VelocityField + ?Sized>(
    field: &F,
    z: &mut [f64],
    endpoint: &[f64],
    condition: Option<&[f64]>,
    cfg: &SamplerConfig,
    t: f64,
    t_next: f64,
    closing: bool,
    io: &mut StepIo<'_>,
) -> Result<Vec<f64>> {
    let out = eval_guided(field, t, z, endpoint, condition, cfg.guidance, cfg.cfg_window)?;
    if closing && cfg.final_step == FinalStep::PosteriorMean {
        if let Some(m) = out.posterior_mean {
            z.copy_from_slice(&m);
            return Ok(out.velocity);
        }
    }
    let dt = t_next - t;
    let g = cfg.diffusion.at(t);
    let mut drift = out.velocity;
    if g > 0.0 {
        let score = out.score.as_ref().ok_or(Error::MissingScore)?;
        for (d, s) in drift.iter_mut().zip(score) {
            *d -= g * s;
        }
    }
    for (zi, di) in z.iter_mut().zip(&drift) {
        *zi += dt * di;
    }
    if g > 0.0 {
        let rng = io
            .rng
            .as_deref_mut()
            .ok_or_else(|| invalid("seed", "stochastic step without a random stream"))?;
        let amp = math::sqrt(2.0 * g * dt.abs());
        for zi in z.iter_mut() {
            *zi += amp * rng::standard_normal(rng);
        }
    }
    Ok(drift)
}

/// Reverse integration from `start` with the given conditioning endpoint.
/// `observe(k, t_k, z_k)` sees every grid state, starting with `k = 0`.
pub fn integrate_reverse<F: VelocityField + ?Sized>(
    field: &F,
    start: &[f64],
    endpoint: &[f64],
    condition: Option<&[f64]>,
    cfg: &SamplerConfig,
    rng: Option<&mut BridgeRng>,
    mut observe: impl FnMut(usize, f64, &[f64], Option<&[f64]>),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dim(field.dim(), start.len())?;
    check_dim(field.dim(), endpoint.len())?;
    let grid = cfg.reverse_grid();
    let mut io = StepIo { rng };
    let mut z = start.to_vec();
    observe(0, grid[0], &z, None);
    let last = grid.len() - 2;
    for k in 0..grid.len() - 1 {
        let closing = cfg.clip > 0.0 && k == last;
        let drift = reverse_step(
            field,
            &mut z,
            endpoint,
            condition,
            cfg,
            grid[k],
            grid[k + 1],
            closing,
            &mut io,
        )?;
        if !crate::vector::is_finite(&z) {
            return Err(Error::NonFinite {
                step: k + 1,
                t: grid[k + 1],
            });
        }
        observe(k + 1, grid[k + 1], &z, Some(&drift));
    }
    Ok(z)
}

fn collect_trajectory<F: VelocityField + ?Sized>(
    field: &F,
    start: &[f64],
    endpoint: &[f64],
    condition: Option<&[f64]>,
    cfg: &SamplerConfig,
    rng: Option<&mut BridgeRng>,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(cfg.steps + 2);
    let mut drifts = cfg.record_drifts.then(Vec::new);
    integrate_reverse(field, start, endpoint, condition, cfg, rng, |_, t, z, d| {
        states.push((t, z.to_vec()));
        if let (Some(ds), Some(d)) = (drifts.as_mut(), d) {
            ds.push(d.to_vec());
        }
    })?;
    Ok(Trajectory {
        states,
        endpoint: endpoint.to_vec(),
        drifts,
    })
}

/// Deterministic reverse PF-ODE from the endpoint itself.
pub fn reverse_ode<F: VelocityField + ?Sized>(field: &F, endpoint: &[f64], cfg: &SamplerConfig) -> Result<Trajectory> {
    if !cfg.diffusion.is_zero() {
        return Err(invalid("diffusion", "reverse_ode needs g = 0; use reverse_sde"));
    }
    collect_trajectory(field, endpoint, endpoint, None, cfg, None)
}

/// Reverse PF-ODE from an arbitrary start state, conditioned on `endpoint`.
pub fn reverse_ode_from<F: VelocityField + ?Sized>(
    field: &F,
    start: &[f64],
    endpoint: &[f64],
    condition: Option<&[f64]>,
    cfg: &SamplerConfig,
) -> Result<Trajectory> {
    if !cfg.diffusion.is_zero() {
        return Err(invalid("diffusion", "reverse_ode needs g = 0; use reverse_sde"));
    }
    collect_trajectory(field, start, endpoint, condition, cfg, None)
}

/// Euler-Maruyama on the reverse SDE. Trajectory `index` draws from stream
/// `(cfg.seed, index)`.
pub fn reverse_sde<F: VelocityField + ?Sized>(
    field: &F,
    endpoint: &[f64],
    cfg: &SamplerConfig,
    index: u64,
) -> Result<Trajectory> {
    let mut rng = rng::stream(cfg.seed, index);
    collect_trajectory(field, endpoint, endpoint, None, cfg, Some(&mut rng))
}

/// Terminal states of `n` SDE trajectories from the same endpoint, together with
/// the states at the requested grid indices (`checkpoints[c][i]` is trajectory `i`
/// at grid index `c`).
pub fn sde_ensemble<F: VelocityField + ?Sized>(
    field: &F,
    endpoint: &[f64],
    cfg: &SamplerConfig,
    n: usize,
    checkpoints: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let run = |i: usize| -> Result<Vec<Vec<f64>>> {
        let mut rng = rng::stream(cfg.seed, i as u64);
        let mut snaps = vec![Vec::new(); checkpoints.len()];
        integrate_reverse(field, endpoint, endpoint, None, cfg, Some(&mut rng), |k, _, z, _| {
            for (slot, c) in snaps.iter_mut().zip(checkpoints) {
                if *c == k {
                    *slot = z.to_vec();
                }
            }
        })?;
        Ok(snaps)
    };
    let per_traj: Vec<Vec<Vec<f64>>> = map_indices(n, run)?;
    let mut out = vec![Vec::with_capacity(n); checkpoints.len()];
    for snaps in per_traj {
        for (c, s) in snaps.into_iter().enumerate() {
            out[c].push(s);
        }
    }
    Ok(out)
}

/// Runs `f(0..n)` in index order, in parallel when the `parallel` feature is on.
pub(crate) fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Forward Euler integration of the same field from `t = 0` to `1 - clip`.
pub fn invert<F: VelocityField + ?Sized>(
    field: &F,
    z0: &[f64],
    endpoint: &[f64],
    cfg: &SamplerConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dim(field.dim(), z0.len())?;
    let grid = cfg.forward_grid();
    let mut z = z0.to_vec();
    for k in 0..grid.len() - 1 {
        let v = field.velocity(grid[k], &z, endpoint, None)?;
        let dt = grid[k + 1] - grid[k];
        for (zi, vi) in z.iter_mut().zip(&v) {
            *zi += dt * vi;
        }
        if !crate::vector::is_finite(&z) {
            return Err(Error::NonFinite {
                step: k + 1,
                t: grid[k + 1],
            });
        }
    }
    Ok(z)
}

/// Output of [`translate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    /// Mixed-trajectory terminal when a source field was used, target terminal otherwise.
    pub latent: Vec<f64>,
    pub target: Trajectory,
    pub source: Option<Trajectory>,
    pub mixed: Option<Trajectory>,
}

/// Runs the target reverse ODE from the shared endpoint and, when a source field
/// is given, the source ODE and the mixed-drift trajectory alongside it.
pub fn translate<S, T>(
    source_field: Option<&S>,
    target_field: &T,
    endpoint: &[f64],
    condition: Option<&[f64]>,
    cfg: &SamplerConfig,
) -> Result<Translation>
where
    S: VelocityField + ?Sized,
    T: VelocityField + ?Sized,
{
    cfg.validate()?;
    if !cfg.diffusion.is_zero() {
        return Err(invalid("diffusion", "translation integrates the PF-ODE (g = 0)"));
    }
    check_dim(target_field.dim(), endpoint.len())?;
    let Some(source_field) = source_field else {
        let target = collect_trajectory(target_field, endpoint, endpoint, condition, cfg, None)?;
        return Ok(Translation {
            latent: target.terminal().to_vec(),
            target,
            source: None,
            mixed: None,
        });
    };
    check_dim(target_field.dim(), source_field.dim())?;

    let grid = cfg.reverse_grid();
    let mut zi = endpoint.to_vec();
    let mut zj = endpoint.to_vec();
    let mut zm = endpoint.to_vec();
    let mut ti = vec![(grid[0], zi.clone())];
    let mut tj = vec![(grid[0], zj.clone())];
    let mut tm = vec![(grid[0], zm.clone())];
    let last = grid.len() - 2;
    for k in 0..grid.len() - 1 {
        let (t, dt) = (grid[k], grid[k + 1] - grid[k]);
        let closing = cfg.clip > 0.0 && k == last;
        let oi = eval_guided(target_field, t, &zi, endpoint, condition, cfg.guidance, cfg.cfg_window)?;
        let oj = source_field.evaluate(t, &zj, endpoint, None)?;
        let eta = mixing_coefficient(t, cfg.t_end);
        let dm = mixed_drift(&oi.velocity, &oj.velocity, eta);
        let pm_close = closing && cfg.final_step == FinalStep::PosteriorMean;
        match (&oi.posterior_mean, &oj.posterior_mean) {
            (Some(mi), Some(mj)) if pm_close => {
                zi.copy_from_slice(mi);
                zj.copy_from_slice(mj);
                let mixed_mean = mixed_drift(mi, mj, eta);
                zm.copy_from_slice(&mixed_mean);
            }
            _ => {
                for d in 0..zi.len() {
                    zi[d] += dt * oi.velocity[d];
                    zj[d] += dt * oj.velocity[d];
                    zm[d] += dt * dm[d];
                }
            }
        }
        if !crate::vector::is_finite(&zm) || !crate::vector::is_finite(&zi) {
            return Err(Error::NonFinite {
                step: k + 1,
                t: grid[k + 1],
            });
        }
        ti.push((grid[k + 1], zi.clone()));
        tj.push((grid[k + 1], zj.clone()));
        tm.push((grid[k + 1], zm.clone()));
    }
    let wrap = |states| Trajectory {
        states,
        endpoint: endpoint.to_vec(),
        drifts: None,
    };
    Ok(Translation {
        latent: zm,
        target: wrap(ti),
        source: Some(wrap(tj)),
        mixed: Some(wrap(tm)),
    })
}

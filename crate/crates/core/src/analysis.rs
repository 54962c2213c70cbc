//! Error-bound harness and representation metrics.
//!
//! The translation error bound checked here is
//!
//! ```text
//! |x0 - x0_bar| <= W(T) |Delta| + sqrt(Wint * E / delta) + C tau^2 + eps_D
//! W(t)  = L_D exp(int_0^t L_v)
//! Wint  = int_0^T W(t)^2 dt
//! ```
//!
//! with `L_v(t)` estimated numerically along trajectories, `E` the expected
//! integrated squared field error and `C tau^2` the accumulated Euler local error.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::domains::{Decoder, DomainMap, EncoderHandle, ToyWorld};
use crate::error::{check_dim, invalid, Error, Result};
use crate::field::{FieldOutput, VelocityField};
use crate::math;
use crate::rng;
use crate::sampler::{self, FinalStep, SamplerConfig, Trajectory};
use crate::schedule::Schedule;
use crate::vector;

/// Central-difference probe radius.
pub const PROBE_RADIUS: f64 = 1e-4;
/// Power iterations used for the spectral norm.
pub const POWER_ITERATIONS: usize = 8;
/// Multiplicative slack applied to bounds built from estimated constants.
pub const ESTIMATE_SLACK: f64 = 1.10;

/// Spectral norm of the finite-difference Jacobian `dv/dz` at one point.
pub fn lipschitz_at<F: VelocityField + ?Sized>(field: &F, t: f64, z: &[f64], endpoint: &[f64]) -> Result<f64> {
    let d = z.len();
    let mut jac = vec![0.0; d * d];
    let mut probe = z.to_vec();
    for j in 0..d {
        probe[j] = z[j] + PROBE_RADIUS;
        let up = field.velocity(t, &probe, endpoint, None)?;
        probe[j] = z[j] - PROBE_RADIUS;
        let down = field.velocity(t, &probe, endpoint, None)?;
        probe[j] = z[j];
        for i in 0..d {
            let v = (up[i] - down[i]) / (2.0 * PROBE_RADIUS);
            if !v.is_finite() {
                return Err(Error::NonFinite { step: 0, t });
            }
            jac[i * d + j] = v;
        }
    }
    Ok(spectral_norm(&jac, d))
}

/// Largest singular value of a square row-major matrix by power iteration on `J^T J`.
pub fn spectral_norm(jac: &[f64], d: usize) -> f64 {
    let mut u = vec![1.0 / math::sqrt(d as f64); d];
    for _ in 0..POWER_ITERATIONS {
        let ju = vector::matvec(jac, d, d, &u);
        let mut w = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                w[j] += jac[i * d + j] * ju[i];
            }
        }
        let n = vector::norm(&w);
        if n == 0.0 {
            return 0.0;
        }
        u = vector::scale(1.0 / n, &w);
    }
    vector::norm(&vector::matvec(jac, d, d, &u))
}

/// Lipschitz profile along a time grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LipschitzEstimate {
    /// Grid times in integration order.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `int_0^{t_k} L_v` at each grid time (trapezoid rule).
    pub cumulative: Vec<f64>,
    pub integral: f64,
    /// Largest second-difference estimate of `|z''|` along the trajectories.
    pub b_hat: f64,
}

fn second_difference_bound(tr: &Trajectory) -> f64 {
    let s = &tr.states;
    let mut best = 0.0_f64;
    for k in 1..s.len().saturating_sub(1) {
        let (t0, z0) = (&s[k - 1].0, &s[k - 1].1);
        let (t1, z1) = (&s[k].0, &s[k].1);
        let (t2, z2) = (&s[k + 1].0, &s[k + 1].1);
        let h1 = t1 - t0;
        let h2 = t2 - t1;
        let acc: Vec<f64> = (0..z1.len())
            .map(|i| 2.0 * ((z2[i] - z1[i]) / h2 - (z1[i] - z0[i]) / h1) / (h1 + h2))
            .collect();
        best = best.max(vector::norm(&acc));
    }
    best
}

/// Estimates `L_v(t_k)` as the largest Jacobian norm over the states of all
/// trajectories at grid index `k`; the trajectories must share one grid.
pub fn estimate_lipschitz<F: VelocityField + ?Sized>(
    field: &F,
    trajectories: &[Trajectory],
) -> Result<LipschitzEstimate> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InsufficientData("no trajectories to probe".to_string()))?;
    let times: Vec<f64> = first.times();
    for tr in trajectories {
        check_dim(times.len(), tr.states.len())?;
    }
    let mut values = vec![0.0_f64; times.len()];
    for tr in trajectories {
        for (k, (t, z)) in tr.states.iter().enumerate() {
            let l = lipschitz_at(field, *t, z, &tr.endpoint)?;
            values[k] = values[k].max(l);
        }
    }
    let cumulative = cumulative_from_zero(&times, &values);
    let integral = cumulative.iter().copied().fold(0.0, f64::max);
    let b_hat = trajectories.iter().map(second_difference_bound).fold(0.0, f64::max);
    Ok(LipschitzEstimate {
        times,
        values,
        cumulative,
        integral,
        b_hat,
    })
}

/// `int_{min t}^{t_k} f` by the trapezoid rule on a monotone grid.
pub fn cumulative_from_zero(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let increasing = times[n - 1] > times[0];
    let order: Vec<usize> = if increasing {
        (0..n).collect()
    } else {
        (0..n).rev().collect()
    };
    let mut acc = 0.0;
    out[order[0]] = 0.0;
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        acc += 0.5 * (values[a] + values[b]) * (times[b] - times[a]).abs();
        out[b] = acc;
    }
    out
}

/// Trapezoid integral of samples on a monotone grid.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    cumulative_from_zero(times, values).into_iter().fold(0.0, f64::max)
}

/// Constants of the bound derived from a Lipschitz profile.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundConstants {
    /// `W(T)`.
    pub w_end: f64,
    /// `int_0^T W^2`.
    pub w_squared_integral: f64,
    /// Accumulated Euler local error bound `sum_k (B/2) h_k^2 L_D exp(sum_{j>k} h_j L_v(t_j))`.
    pub disc_term: f64,
    /// `disc_term / tau^2`.
    pub c: f64,
}

pub fn bound_constants(est: &LipschitzEstimate, decoder_lipschitz: f64, tau: f64) -> BoundConstants {
    let w: Vec<f64> = est
        .cumulative
        .iter()
        .map(|c| decoder_lipschitz * math::exp(*c))
        .collect();
    let w_sq: Vec<f64> = w.iter().map(|v| v * v).collect();
    let w_end = w.iter().copied().fold(0.0, f64::max);
    let w_squared_integral = trapezoid(&est.times, &w_sq);
    let steps = est.times.len().saturating_sub(1);
    let h: Vec<f64> = (0..steps).map(|k| (est.times[k + 1] - est.times[k]).abs()).collect();
    let mut tail = 0.0;
    let mut disc = 0.0;
    for k in (0..steps).rev() {
        disc += 0.5 * est.b_hat * h[k] * h[k] * math::exp(tail);
        tail += h[k] * est.values[k];
    }
    let disc_term = decoder_lipschitz * disc;
    BoundConstants {
        w_end,
        w_squared_integral,
        disc_term,
        c: if tau > 0.0 { disc_term / (tau * tau) } else { 0.0 },
    }
}

/// Per-trial decomposition of the bound.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorBudget {
    pub trial: usize,
    pub encoder_term: f64,
    pub field_term: f64,
    pub disc_term: f64,
    pub decoder_term: f64,
    pub measured_total: f64,
    pub delta: f64,
    pub encoder_error: f64,
    /// Realised `int |e|^2` of the injected field error.
    pub field_error_energy: f64,
    pub lipschitz_integral: f64,
    pub b_hat: f64,
    pub bound_holds: bool,
    pub holds_with_slack: bool,
}

impl ErrorBudget {
    pub fn bound(&self) -> f64 {
        self.encoder_term + self.field_term + self.disc_term + self.decoder_term
    }
}

/// Aggregate over trials.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundSummary {
    pub trials: usize,
    pub violations: usize,
    pub violations_with_slack: usize,
    pub violation_rate: f64,
    pub allowed_rate: f64,
    pub stochastic: bool,
    pub passed: bool,
    pub max_ratio: f64,
}

/// Setup of a bound-verification run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BoundExperiment {
    pub source: usize,
    pub encoder: EncoderHandle,
    pub decoder: Decoder,
    /// Scale `s` of the injected constant field error `e = s xi`, `xi ~ N(0, I)`.
    pub field_noise: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BoundExperiment {
    fn default() -> Self {
        Self {
            source: 0,
            encoder: EncoderHandle::Oracle,
            decoder: Decoder::Identity,
            field_noise: 0.0,
            delta: 0.1,
            trials: 100,
            seed: 0,
        }
    }
}

/// A field with an additive velocity error; only the velocity is reported.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedField<F> {
    pub base: F,
    pub error: Vec<f64>,
}

impl<F: VelocityField> VelocityField for InjectedField<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn evaluate(&self, t: f64, z: &[f64], endpoint: &[f64], condition: Option<&[f64]>) -> Result<FieldOutput> {
        let mut v = self.base.velocity(t, z, endpoint, condition)?;
        vector::axpy(1.0, &self.error, &mut v);
        Ok(FieldOutput::velocity_only(v))
    }
}

/// Runs `trials` translations through the exact bridge field of the target domain
/// and checks each against the bound. Refuses setups whose true output or field
/// error is not known exactly.
pub fn verify_bound(
    world: &ToyWorld,
    schedule: Schedule,
    cfg: &SamplerConfig,
    exp: &BoundExperiment,
) -> Result<(Vec<ErrorBudget>, BoundSummary)> {
    cfg.validate()?;
    if exp.source > 1 {
        return Err(invalid("source", "domain index must be 0 or 1"));
    }
    let target = 1 - exp.source;
    if !world.is_noiseless(target) {
        return Err(Error::Unsupported(
            "the target domain has appearance noise, so the exact translation is not a deterministic function of the latent"
                .to_string(),
        ));
    }
    if !matches!(world.maps[target], DomainMap::Affine { .. }) {
        return Err(Error::Unsupported(
            "the target map is not affine, so no exact field is available to measure the field error against"
                .to_string(),
        ));
    }
    if cfg.clip > 0.0 && cfg.final_step != FinalStep::Euler {
        return Err(Error::Unsupported(
            "the discretisation term assumes Euler steps throughout; set final_step = euler".to_string(),
        ));
    }
    if !cfg.diffusion.is_zero() || cfg.guidance > 1.0 {
        return Err(Error::Unsupported("the bound concerns the unguided PF-ODE".to_string()));
    }
    if !(exp.delta > 0.0 && exp.delta < 1.0) {
        return Err(invalid("delta", "must lie in (0, 1)"));
    }
    if !(exp.field_noise >= 0.0) {
        return Err(invalid("field_noise", "must be nonnegative"));
    }
    let oracle = world.oracle_field(target, schedule)?;
    let d = world.latent_dim;
    let l_d = exp.decoder.lipschitz(d);
    let eps_d = exp.decoder.error_bound();
    let horizon = cfg.reverse_grid()[0];
    let expected_energy = exp.field_noise * exp.field_noise * d as f64 * horizon;
    let tau = cfg.tau();

    let run = |trial: usize| -> Result<ErrorBudget> {
        let mut rng = rng::stream(exp.seed, trial as u64);
        let pair = world.draw(&mut rng);
        let y = world.maps[exp.source].inverse(&pair.x[exp.source])?;
        let encoded = exp.encoder.encode(world, &pair.x[exp.source], exp.source, &mut rng)?;
        let xi = rng::normal_vec(&mut rng, d);
        let field = InjectedField {
            base: &oracle,
            error: vector::scale(exp.field_noise, &xi),
        };
        let reference = sampler::reverse_ode(&oracle, &y, cfg)?;
        let perturbed = sampler::reverse_ode(&field, &encoded, cfg)?;
        let est = estimate_lipschitz(&oracle, &[reference.clone(), perturbed.clone()])?;
        let k = bound_constants(&est, l_d, tau);
        let decoded = exp.decoder.decode(perturbed.terminal());
        let measured = vector::distance(&decoded, &pair.x[target]);
        let encoder_error = vector::distance(&encoded, &y);
        let energy = vector::dot(&field.error, &field.error) * horizon;
        let budget = ErrorBudget {
            trial,
            encoder_term: k.w_end * encoder_error,
            field_term: math::sqrt(k.w_squared_integral * expected_energy / exp.delta),
            disc_term: k.disc_term,
            decoder_term: eps_d,
            measured_total: measured,
            delta: exp.delta,
            encoder_error,
            field_error_energy: energy,
            lipschitz_integral: est.integral,
            b_hat: est.b_hat,
            bound_holds: false,
            holds_with_slack: false,
        };
        let bound = budget.bound();
        Ok(ErrorBudget {
            bound_holds: measured <= bound,
            holds_with_slack: measured <= ESTIMATE_SLACK * bound,
            ..budget
        })
    };
    let budgets = sampler::map_indices(exp.trials, run)?;
    let summary = summarize(&budgets, exp.field_noise > 0.0, exp.delta);
    Ok((budgets, summary))
}

/// Violation counts; stochastic runs may fail in up to `delta + 3 SE` of trials.
pub fn summarize(budgets: &[ErrorBudget], stochastic: bool, delta: f64) -> BoundSummary {
    let n = budgets.len();
    let violations = budgets.iter().filter(|b| !b.bound_holds).count();
    let violations_with_slack = budgets.iter().filter(|b| !b.holds_with_slack).count();
    let rate = if n > 0 { violations as f64 / n as f64 } else { 0.0 };
    let allowed_rate = if stochastic && n > 0 {
        delta + 3.0 * math::sqrt(delta * (1.0 - delta) / n as f64)
    } else {
        0.0
    };
    let max_ratio = budgets
        .iter()
        .map(|b| {
            if b.bound() > 0.0 {
                b.measured_total / b.bound()
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    BoundSummary {
        trials: n,
        violations,
        violations_with_slack,
        violation_rate: rate,
        allowed_rate,
        stochastic,
        passed: rate <= allowed_rate,
        max_ratio,
    }
}

/// Deviation between two ODE runs whose endpoints differ by `perturbation`,
/// against the Gronwall factor `exp(int L_v)` estimated along both runs.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GronwallCheck {
    pub endpoint_shift: f64,
    pub output_deviation: f64,
    pub factor: f64,
}

impl GronwallCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.output_deviation <= self.factor * self.endpoint_shift * slack
    }
}

pub fn gronwall_check<F: VelocityField + ?Sized>(
    field: &F,
    endpoint: &[f64],
    perturbation: &[f64],
    cfg: &SamplerConfig,
) -> Result<GronwallCheck> {
    check_dim(endpoint.len(), perturbation.len())?;
    let shifted: Vec<f64> = endpoint.iter().zip(perturbation).map(|(a, b)| a + b).collect();
    let a = sampler::reverse_ode(field, endpoint, cfg)?;
    let b = sampler::reverse_ode(field, &shifted, cfg)?;
    let est = estimate_lipschitz(field, &[a.clone(), b.clone()])?;
    Ok(GronwallCheck {
        endpoint_shift: vector::norm(perturbation),
        output_deviation: vector::distance(a.terminal(), b.terminal()),
        factor: math::exp(est.integral),
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergencePoint {
    pub steps: usize,
    pub tau: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceStudy {
    pub points: Vec<ConvergencePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub reference_steps: Option<usize>,
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Terminal error of the reverse ODE for each step count against a reference,
/// with a log-log fit of error against `tau`. The reference is a run with
/// `reference_steps` unless an exact terminal value is supplied.
pub fn convergence_study<F: VelocityField + ?Sized>(
    field: &F,
    endpoint: &[f64],
    steps: &[usize],
    base: &SamplerConfig,
    reference_steps: usize,
    exact: Option<&[f64]>,
) -> Result<ConvergenceStudy> {
    let reference = match exact {
        Some(r) => r.to_vec(),
        None => {
            let cfg = SamplerConfig {
                steps: reference_steps,
                ..base.clone()
            };
            sampler::reverse_ode(field, endpoint, &cfg)?.terminal().to_vec()
        }
    };
    let mut points = Vec::with_capacity(steps.len());
    for &n in steps {
        let cfg = SamplerConfig {
            steps: n,
            ..base.clone()
        };
        let z = sampler::reverse_ode(field, endpoint, &cfg)?;
        points.push(ConvergencePoint {
            steps: n,
            tau: cfg.tau(),
            error: vector::distance(z.terminal(), &reference),
        });
    }
    let usable: Vec<&ConvergencePoint> = points.iter().filter(|p| p.error > 0.0 && p.error.is_finite()).collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "convergence fit needs at least 3 points with nonzero error, got {}",
            usable.len()
        )));
    }
    let lx: Vec<f64> = usable.iter().map(|p| math::ln(p.tau)).collect();
    let ly: Vec<f64> = usable.iter().map(|p| math::ln(p.error)).collect();
    let (slope, intercept) = linear_fit(&lx, &ly);
    Ok(ConvergenceStudy {
        points,
        slope,
        intercept,
        reference_steps: exact.is_none().then_some(reference_steps),
    })
}

/// Mean cosine similarity of matching rows; rows where either vector is zero are
/// skipped and counted.
pub fn cosine_mean(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, usize)> {
    check_dim(a.len(), b.len())?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (x, y) in a.iter().zip(b) {
        check_dim(x.len(), y.len())?;
        let (nx, ny) = (vector::norm(x), vector::norm(y));
        if nx == 0.0 || ny == 0.0 {
            continue;
        }
        sum += vector::dot(x, y) / (nx * ny);
        used += 1;
    }
    let excluded = a.len() - used;
    if used == 0 {
        return Err(Error::InsufficientData(
            "every row pair contains a zero vector".to_string(),
        ));
    }
    Ok((sum / used as f64, excluded))
}

fn gram(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = vector::dot(&x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Row-wise top-`k` neighbour mask by kernel value, excluding the diagonal.
fn knn_mask(k: &[f64], n: usize, topk: usize) -> Vec<bool> {
    let mut mask = vec![false; n * n];
    let mut idx: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        idx.clear();
        idx.extend((0..n).filter(|&j| j != i));
        idx.sort_by(|&a, &b| k[i * n + b].total_cmp(&k[i * n + a]).then(a.cmp(&b)));
        for &j in idx.iter().take(topk) {
            mask[i * n + j] = true;
        }
    }
    mask
}

fn hsic_unbiased(k: &[f64], l: &[f64], n: usize) -> f64 {
    let m = n as f64;
    let mut kl_trace = 0.0;
    let mut sum_k = 0.0;
    let mut sum_l = 0.0;
    let mut row_k = vec![0.0; n];
    let mut col_l = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (k[i * n + j], l[i * n + j]);
            kl_trace += a * l[j * n + i];
            sum_k += a;
            sum_l += b;
            row_k[j] += a;
            col_l[i] += b;
        }
    }
    let cross: f64 = row_k.iter().zip(&col_l).map(|(a, b)| a * b).sum();
    (kl_trace + sum_k * sum_l / ((m - 1.0) * (m - 2.0)) - 2.0 * cross / (m - 2.0)) / (m * (m - 3.0))
}

/// Centered kernel alignment restricted to mutual `k`-nearest-neighbour pairs,
/// with linear kernels and the unbiased HSIC estimator.
pub fn cknna(a: &[Vec<f64>], b: &[Vec<f64>], k: usize) -> Result<f64> {
    let n = a.len();
    check_dim(n, b.len())?;
    if n < 4 {
        return Err(Error::InsufficientData("CKNNA needs at least 4 samples".to_string()));
    }
    if k == 0 || k >= n {
        return Err(invalid("k", format!("must lie in 1..{n}")));
    }
    let ka = gram(a);
    let kb = gram(b);
    let similarity = |x: &[f64], y: &[f64]| {
        let mx = knn_mask(x, n, k);
        let my = knn_mask(y, n, k);
        let mask = |m: &[f64]| -> Vec<f64> {
            m.iter()
                .enumerate()
                .map(|(i, v)| if mx[i] && my[i] { *v } else { 0.0 })
                .collect()
        };
        hsic_unbiased(&mask(x), &mask(y), n)
    };
    let ab = similarity(&ka, &kb);
    let aa = similarity(&ka, &ka);
    let bb = similarity(&kb, &kb);
    let denom = math::sqrt(aa * bb);
    if !(denom > 0.0) {
        return Err(Error::InsufficientData(
            "degenerate kernel: neighbourhood HSIC is not positive".to_string(),
        ));
    }
    Ok(ab / denom)
}

/// `cos(gen, gt) - cos(src, gt)`.
pub fn delta_cosim(generated: &[Vec<f64>], ground_truth: &[Vec<f64>], source: &[Vec<f64>]) -> Result<f64> {
    Ok(cosine_mean(generated, ground_truth)?.0 - cosine_mean(source, ground_truth)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlignmentMetrics {
    pub cosine_mean: f64,
    pub excluded: usize,
    pub cknna: f64,
}

pub fn alignment_metrics(a: &[Vec<f64>], b: &[Vec<f64>], k: usize) -> Result<AlignmentMetrics> {
    let (cosine_mean, excluded) = cosine_mean(a, b)?;
    Ok(AlignmentMetrics {
        cosine_mean,
        excluded,
        cknna: cknna(a, b, k)?,
    })
}

/// Unbiased energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|`.
pub fn energy_distance(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InsufficientData(
            "energy distance needs two samples per set".to_string(),
        ));
    }
    let mean_cross = x
        .iter()
        .map(|a| y.iter().map(|b| vector::distance(a, b)).sum::<f64>())
        .sum::<f64>()
        / (x.len() * y.len()) as f64;
    let within = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += vector::distance(&s[i], &s[j]);
            }
        }
        2.0 * acc / (s.len() * (s.len() - 1)) as f64
    };
    Ok(2.0 * mean_cross - within(x) - within(y))
}

//! Forward kernel sampling, flow-matching targets and the score/velocity layer.
//!
//! With pinned endpoints the bridge kernel is
//! `p(z_t | z_0, z_T) = N(alpha z_0 + beta z_T, gamma^2 I)`, and the probability-flow
//! drift is `v = alpha_dot E[z_0|.] + beta_dot z_T + gamma_dot E[eps|.]`.
//! Raw scores are converted to noise means (`u = -gamma s`) at the edge of this
//! module, so nothing downstream divides by `gamma`.

use alloc::vec::Vec;

use crate::error::{check_dim, invalid, Error, Result};
use crate::schedule::Schedule;

/// A latent tagged with its time and pinned endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct BridgeState {
    z: Vec<f64>,
    t: f64,
    endpoint: Vec<f64>,
}

impl BridgeState {
    pub fn new(z: Vec<f64>, t: f64, endpoint: Vec<f64>) -> Result<Self> {
        check_dim(endpoint.len(), z.len())?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t });
        }
        Ok(Self { z, t, endpoint })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn endpoint(&self) -> &[f64] {
        &self.endpoint
    }
}

/// Draws `z_t = alpha z_0 + beta z_T + gamma noise`; returns `(z_t, noise)` so the
/// same draw feeds the training target.
pub fn sample_zt(
    z0: &[f64],
    endpoint: &[f64],
    t: f64,
    schedule: &Schedule,
    noise: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(z0.len(), endpoint.len())?;
    check_dim(z0.len(), noise.len())?;
    let w = schedule.eval(t)?;
    let zt = z0
        .iter()
        .zip(endpoint)
        .zip(noise)
        .map(|((a, b), e)| w.alpha * a + w.beta * b + w.gamma * e)
        .collect();
    Ok((zt, noise.to_vec()))
}

/// Flow-matching regression target `alpha_dot z_0 + beta_dot z_T + gamma_dot eps`.
pub fn velocity_target(z0: &[f64], endpoint: &[f64], t: f64, schedule: &Schedule, eps: &[f64]) -> Result<Vec<f64>> {
    check_dim(z0.len(), endpoint.len())?;
    check_dim(z0.len(), eps.len())?;
    let r = schedule.eval_derivatives(t)?;
    Ok(z0
        .iter()
        .zip(endpoint)
        .zip(eps)
        .map(|((a, b), e)| r.alpha_dot * a + r.beta_dot * b + r.gamma_dot * e)
        .collect())
}

/// `u = -gamma s`. Fails when `gamma == 0`, where a raw score carries no noise information.
pub fn noise_mean_from_score(score: &[f64], t: f64, schedule: &Schedule) -> Result<Vec<f64>> {
    let gamma = schedule.eval(t)?.gamma;
    if gamma == 0.0 {
        return Err(Error::SingularConversion { t });
    }
    Ok(score.iter().map(|s| -gamma * s).collect())
}

/// Noise mean implied by a posterior mean: `u = (z - alpha z0_hat - beta z_T) / gamma`.
pub fn noise_mean_from_posterior(
    z: &[f64],
    posterior_mean: &[f64],
    endpoint: &[f64],
    t: f64,
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    check_dim(z.len(), posterior_mean.len())?;
    check_dim(z.len(), endpoint.len())?;
    let w = schedule.eval(t)?;
    if w.gamma == 0.0 {
        return Err(Error::SingularConversion { t });
    }
    Ok(z.iter()
        .zip(posterior_mean)
        .zip(endpoint)
        .map(|((z, m), e)| (z - w.alpha * m - w.beta * e) / w.gamma)
        .collect())
}

/// `v = alpha_dot z0_hat + beta_dot z_T + gamma_dot u`.
pub fn score_to_velocity(
    posterior_mean: &[f64],
    noise_mean: &[f64],
    endpoint: &[f64],
    t: f64,
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    check_dim(posterior_mean.len(), noise_mean.len())?;
    check_dim(posterior_mean.len(), endpoint.len())?;
    let r = schedule.eval_derivatives(t)?;
    Ok(posterior_mean
        .iter()
        .zip(noise_mean)
        .zip(endpoint)
        .map(|((m, u), e)| r.alpha_dot * m + r.beta_dot * e + r.gamma_dot * u)
        .collect())
}

/// Recovers `(z0_hat, u_hat)` from a velocity by solving
/// `z = alpha z0 + beta z_T + gamma u` and `v = alpha_dot z0 + beta_dot z_T + gamma_dot u`.
pub fn means_from_velocity(
    velocity: &[f64],
    z: &[f64],
    endpoint: &[f64],
    t: f64,
    schedule: &Schedule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(z.len(), velocity.len())?;
    check_dim(z.len(), endpoint.len())?;
    let w = schedule.eval(t)?;
    let r = schedule.eval_derivatives(t)?;
    let det = w.alpha * r.gamma_dot - w.gamma * r.alpha_dot;
    if w.gamma == 0.0 || det.abs() < 1e-12 {
        return Err(Error::SingularConversion { t });
    }
    let mut m = Vec::with_capacity(z.len());
    let mut u = Vec::with_capacity(z.len());
    for ((zi, vi), ei) in z.iter().zip(velocity).zip(endpoint) {
        let p = zi - w.beta * ei;
        let q = vi - r.beta_dot * ei;
        m.push((r.gamma_dot * p - w.gamma * q) / det);
        u.push((w.alpha * q - r.alpha_dot * p) / det);
    }
    Ok((m, u))
}

/// Drift of the reverse SDE sharing the PF-ODE marginals: `v - g s`.
/// Its diffusion coefficient is `sqrt(2 g)`; `g = 0` gives back the PF-ODE drift.
pub fn reverse_sde_drift(velocity: &[f64], score: &[f64], g: f64) -> Result<Vec<f64>> {
    check_dim(velocity.len(), score.len())?;
    if !(g >= 0.0) {
        return Err(invalid("g", "diffusion coefficient must be nonnegative"));
    }
    Ok(velocity.iter().zip(score).map(|(v, s)| v - g * s).collect())
}

/// The same drift written through conditional means:
/// `alpha_dot z0_hat + beta_dot z_T + (gamma_dot + g / gamma) u`.
pub fn reverse_sde_drift_from_means(
    posterior_mean: &[f64],
    noise_mean: &[f64],
    endpoint: &[f64],
    t: f64,
    schedule: &Schedule,
    g: f64,
) -> Result<Vec<f64>> {
    check_dim(posterior_mean.len(), noise_mean.len())?;
    check_dim(posterior_mean.len(), endpoint.len())?;
    let gamma = schedule.eval(schedule.clamp_time(t))?.gamma;
    if gamma == 0.0 {
        return Err(Error::SingularConversion { t });
    }
    let r = schedule.eval_derivatives(t)?;
    let noise_coef = r.gamma_dot + g / gamma;
    Ok(posterior_mean
        .iter()
        .zip(noise_mean)
        .zip(endpoint)
        .map(|((m, u), e)| r.alpha_dot * m + r.beta_dot * e + noise_coef * u)
        .collect())
}

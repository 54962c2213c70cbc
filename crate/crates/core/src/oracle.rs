//! Closed-form conditional means for Gaussian domains.
//!
//! When `z_0 | z_T ~ N(mu + G z_T, Sigma)`, the bridge marginal
//! `z_t | z_T` is Gaussian and every conditional expectation is linear in `z_t`:
//!
//! ```text
//! K      = alpha^2 Sigma + gamma^2 I
//! r      = z_t - alpha (mu + G z_T) - beta z_T
//! z0_hat = mu + G z_T + alpha Sigma K^-1 r
//! u_hat  = gamma K^-1 r
//! score  = -K^-1 r
//! ```
//!
//! `G = 0` is the usual "independent endpoint" domain; `Sigma = 0` with a nonzero
//! gain describes a deterministic pairing `z_0 = mu + G z_T`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};
use crate::field::{FieldOutput, VelocityField};
use crate::math;
use crate::rng::{self, BridgeRng};
use crate::schedule::Schedule;
use crate::vector;

/// Regularisation added when `K` is numerically singular.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// `z_0 | z_T ~ N(mean + gain z_T, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDomain {
    mean: Vec<f64>,
    gain: Option<DMatrix<f64>>,
    covariance: Covariance,
}

impl GaussianDomain {
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), variances.len())?;
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("covariance", "variances must be finite and nonnegative"));
        }
        Ok(Self {
            mean,
            gain: None,
            covariance: Covariance::Diagonal(variances),
        })
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::diagonal(mean, alloc::vec![variance; d])
    }

    /// Standard normal in one dimension scaled to `N(mean, variance)`.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self> {
        Self::isotropic(alloc::vec![mean], variance)
    }

    pub fn full(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
            });
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 * covariance.amax().max(1.0) {
            return Err(invalid("covariance", "must be symmetric"));
        }
        let eig = nalgebra::SymmetricEigen::new(covariance.clone());
        if eig.eigenvalues.iter().any(|l| *l < -1e-12 * covariance.amax().max(1.0)) {
            return Err(invalid("covariance", "must be positive semidefinite"));
        }
        Ok(Self {
            mean,
            gain: None,
            covariance: Covariance::Full(covariance),
        })
    }

    /// Makes the mean depend on the endpoint: `mean + gain z_T`.
    pub fn with_gain(mut self, gain: DMatrix<f64>) -> Result<Self> {
        let d = self.dim();
        if gain.nrows() != d || gain.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: gain.nrows(),
            });
        }
        self.gain = Some(gain);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    /// Mean of `z_0` given the endpoint.
    pub fn conditional_mean(&self, endpoint: &[f64]) -> Vec<f64> {
        match &self.gain {
            None => self.mean.clone(),
            Some(g) => {
                let shift = g * DVector::from_column_slice(endpoint);
                self.mean.iter().zip(shift.iter()).map(|(m, s)| m + s).collect()
            }
        }
    }

    /// Draws `z_0 ~ N(mean + G z_T, Sigma)`.
    pub fn sample(&self, endpoint: &[f64], rng: &mut BridgeRng) -> Vec<f64> {
        let mut z = self.conditional_mean(endpoint);
        let xi = rng::normal_vec(rng, self.dim());
        match &self.covariance {
            Covariance::Diagonal(v) => {
                for ((zi, vi), x) in z.iter_mut().zip(v).zip(&xi) {
                    *zi += math::sqrt(*vi) * x;
                }
            }
            Covariance::Full(m) => {
                let eig = m.clone().symmetric_eigen();
                let xi = DVector::from_column_slice(&xi);
                let scaled = DVector::from_iterator(
                    xi.len(),
                    eig.eigenvalues
                        .iter()
                        .zip(xi.iter())
                        .map(|(l, x)| math::sqrt(l.max(0.0)) * x),
                );
                let draw = &eig.eigenvectors * scaled;
                for (zi, d) in z.iter_mut().zip(draw.iter()) {
                    *zi += d;
                }
            }
        }
        z
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        match &self.covariance {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            Covariance::Full(m) => m.clone(),
        }
    }

    /// Mean and covariance of the bridge marginal `z_t | z_T`.
    pub fn marginal(&self, endpoint: &[f64], t: f64, schedule: &Schedule) -> Result<(Vec<f64>, DMatrix<f64>)> {
        check_dim(self.dim(), endpoint.len())?;
        let w = schedule.eval(t)?;
        let mu = self.conditional_mean(endpoint);
        let mean = vector::lincomb(w.alpha, &mu, w.beta, endpoint);
        let cov =
            self.cov_matrix() * (w.alpha * w.alpha) + DMatrix::identity(self.dim(), self.dim()) * (w.gamma * w.gamma);
        Ok((mean, cov))
    }

    /// `(z0_hat, u_hat, score)` at time `t`. The score is `None` when `gamma == 0`.
    pub fn conditional_means(
        &self,
        z: &[f64],
        endpoint: &[f64],
        t: f64,
        schedule: &Schedule,
    ) -> Result<ConditionalMeans> {
        let d = self.dim();
        check_dim(d, z.len())?;
        check_dim(d, endpoint.len())?;
        let w = schedule.eval(t)?;
        if w.alpha == 0.0 && w.gamma == 0.0 {
            return Err(Error::Singular(alloc::format!(
                "alpha = gamma = 0 at t = {t}: the state carries no information about z_0"
            )));
        }
        let mu = self.conditional_mean(endpoint);
        let r: Vec<f64> = (0..d).map(|i| z[i] - w.alpha * mu[i] - w.beta * endpoint[i]).collect();
        let a2 = w.alpha * w.alpha;
        let g2 = w.gamma * w.gamma;
        // k_inv_r = K^-1 r
        let (k_inv_r, sigma_k_inv_r) = match &self.covariance {
            Covariance::Diagonal(var) => {
                let mut kr = Vec::with_capacity(d);
                let mut skr = Vec::with_capacity(d);
                for i in 0..d {
                    let mut k = a2 * var[i] + g2;
                    if k <= JITTER {
                        k += JITTER;
                    }
                    kr.push(r[i] / k);
                    skr.push(var[i] * r[i] / k);
                }
                (kr, skr)
            }
            Covariance::Full(sigma) => {
                let k = sigma * a2 + DMatrix::identity(d, d) * g2;
                let chol = k
                    .clone()
                    .cholesky()
                    .or_else(|| (k + DMatrix::identity(d, d) * JITTER).cholesky())
                    .ok_or_else(|| Error::Singular(alloc::format!("bridge marginal covariance at t = {t}")))?;
                let kr = chol.solve(&DVector::from_column_slice(&r));
                let skr = sigma * &kr;
                (kr.iter().copied().collect(), skr.iter().copied().collect())
            }
        };
        let posterior_mean = (0..d).map(|i| mu[i] + w.alpha * sigma_k_inv_r[i]).collect();
        let noise_mean = k_inv_r.iter().map(|x| w.gamma * x).collect();
        let score = (w.gamma > 0.0).then(|| k_inv_r.iter().map(|x| -x).collect());
        Ok(ConditionalMeans {
            posterior_mean,
            noise_mean,
            score,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMeans {
    pub posterior_mean: Vec<f64>,
    pub noise_mean: Vec<f64>,
    pub score: Option<Vec<f64>>,
}

/// `E[z_0 | z_t, z_T]` for a Gaussian domain.
pub fn posterior_mean(
    domain: &GaussianDomain,
    z: &[f64],
    endpoint: &[f64],
    t: f64,
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    Ok(domain.conditional_means(z, endpoint, t, schedule)?.posterior_mean)
}

/// The exact bridge field of a Gaussian domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    domain: GaussianDomain,
    schedule: Schedule,
}

impl GaussianOracle {
    pub fn new(domain: GaussianDomain, schedule: Schedule) -> Self {
        Self { domain, schedule }
    }

    pub fn domain(&self) -> &GaussianDomain {
        &self.domain
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }
}

/// Velocity, score, posterior mean and noise mean at `(t, z, z_T)`.
///
/// `t` is moved into the schedule's clip zone first, so every returned quantity
/// refers to the same (clamped) time.
pub fn oracle_field(
    domain: &GaussianDomain,
    z: &[f64],
    endpoint: &[f64],
    t: f64,
    schedule: &Schedule,
) -> Result<FieldOutput> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange { t });
    }
    let t = schedule.clamp_time(t);
    let means = domain.conditional_means(z, endpoint, t, schedule)?;
    let w = schedule.eval(t)?;
    let r = schedule.eval_derivatives(t)?;
    let velocity = (0..z.len())
        .map(|i| r.alpha_dot * means.posterior_mean[i] + r.beta_dot * endpoint[i] + r.gamma_dot * means.noise_mean[i])
        .collect();
    Ok(FieldOutput::from_means(
        velocity,
        means.posterior_mean,
        means.noise_mean,
        w.gamma,
    ))
}

impl VelocityField for GaussianOracle {
    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn evaluate(&self, t: f64, z: &[f64], endpoint: &[f64], _condition: Option<&[f64]>) -> Result<FieldOutput> {
        oracle_field(&self.domain, z, endpoint, t, &self.schedule)
    }
}

/// Exact PF-ODE flow map of a one-dimensional Gaussian oracle: the state at time
/// `t` that shares the standardised offset of `z_from` at `t_from`.
pub fn scalar_flow_map(
    domain: &GaussianDomain,
    endpoint: f64,
    schedule: &Schedule,
    t_from: f64,
    z_from: f64,
    t: f64,
) -> Result<f64> {
    check_dim(1, domain.dim())?;
    let (m0, c0) = domain.marginal(&[endpoint], t_from, schedule)?;
    let (m1, c1) = domain.marginal(&[endpoint], t, schedule)?;
    let s0 = math::sqrt(c0[(0, 0)]);
    if s0 == 0.0 {
        return Err(Error::Singular("zero marginal spread at the start time".into()));
    }
    Ok(m1[0] + math::sqrt(c1[(0, 0)]) * (z_from - m0[0]) / s0)
}

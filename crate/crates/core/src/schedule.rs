//! Interpolant weight schedules.
//!
//! A schedule fixes the coefficients of the linear stochastic interpolant
//! `z_t = alpha(t) z_0 + beta(t) z_T + gamma(t) eps` on the horizon `T = 1`.
//! Three families are provided:
//!
//! - [`ScheduleKind::LinearBridge`]: `alpha = 1 - t`, `beta = t`,
//!   `gamma^2 = gamma_max^2 t (1 - t)`.
//! - [`ScheduleKind::SnrBridge`]: weights written through the signal-to-noise ratio
//!   of a variance-preserving diffusion with a linear noise rate.
//! - [`ScheduleKind::RectifiedFlow`]: the linear bridge with `gamma = 0`.
//!
//! All derivatives are analytic. `gamma` has square-root behaviour at both ends
//! for the bridge families, so derivative evaluation clamps `t` into
//! `[CLIP, 1 - CLIP]`.

use crate::error::{invalid, Error, Result};
use crate::math;

/// Endpoint clip applied wherever `gamma_dot` would diverge.
pub const CLIP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ScheduleKind {
    #[cfg_attr(feature = "serde", serde(rename = "linear"))]
    LinearBridge { gamma_max: f64 },
    #[cfg_attr(feature = "serde", serde(rename = "snr"))]
    SnrBridge { beta_min: f64, beta_max: f64 },
    #[cfg_attr(feature = "serde", serde(rename = "rectified"))]
    RectifiedFlow,
}

/// The triple `(alpha, beta, gamma)` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Time derivatives of the weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub alpha_dot: f64,
    pub beta_dot: f64,
    pub gamma_dot: f64,
    /// Set when the requested time fell inside a clip zone and was moved.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Schedule {
    kind: ScheduleKind,
}

impl Schedule {
    pub fn new(kind: ScheduleKind) -> Result<Self> {
        match kind {
            ScheduleKind::LinearBridge { gamma_max } => {
                if !(gamma_max >= 0.0 && gamma_max.is_finite()) {
                    return Err(invalid("gamma_max", "must be finite and nonnegative"));
                }
            }
            ScheduleKind::SnrBridge { beta_min, beta_max } => {
                if !(beta_min > 0.0 && beta_max > 0.0 && beta_min.is_finite() && beta_max.is_finite()) {
                    return Err(invalid("beta_min/beta_max", "must be finite and positive"));
                }
            }
            ScheduleKind::RectifiedFlow => {}
        }
        Ok(Self { kind })
    }

    pub fn linear(gamma_max: f64) -> Result<Self> {
        Self::new(ScheduleKind::LinearBridge { gamma_max })
    }

    /// Variance-preserving SNR bridge; `(0.1, 20)` is the usual DDPM pair.
    pub fn snr(beta_min: f64, beta_max: f64) -> Result<Self> {
        Self::new(ScheduleKind::SnrBridge { beta_min, beta_max })
    }

    pub fn rectified() -> Self {
        Self {
            kind: ScheduleKind::RectifiedFlow,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ScheduleKind::LinearBridge { .. } => "linear",
            ScheduleKind::SnrBridge { .. } => "snr",
            ScheduleKind::RectifiedFlow => "rectified",
        }
    }

    /// Whether `gamma_dot` diverges at the endpoints, i.e. whether a clip is needed.
    pub fn is_singular(&self) -> bool {
        match self.kind {
            ScheduleKind::LinearBridge { gamma_max } => gamma_max > 0.0,
            ScheduleKind::SnrBridge { .. } => true,
            ScheduleKind::RectifiedFlow => false,
        }
    }

    /// Whether `gamma` vanishes identically.
    pub fn is_deterministic(&self) -> bool {
        match self.kind {
            ScheduleKind::LinearBridge { gamma_max } => gamma_max == 0.0,
            ScheduleKind::SnrBridge { .. } => false,
            ScheduleKind::RectifiedFlow => true,
        }
    }

    /// The endpoint clip this schedule needs (`CLIP` or zero).
    pub fn clip(&self) -> f64 {
        if self.is_singular() {
            CLIP
        } else {
            0.0
        }
    }

    /// Moves `t` into `[clip, 1 - clip]`.
    pub fn clamp_time(&self, t: f64) -> f64 {
        let c = self.clip();
        t.clamp(c, 1.0 - c)
    }

    pub fn eval(&self, t: f64) -> Result<Weights> {
        check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::LinearBridge { gamma_max } => Weights {
                alpha: 1.0 - t,
                beta: t,
                gamma: gamma_max * math::sqrt(t * (1.0 - t)),
            },
            ScheduleKind::RectifiedFlow => Weights {
                alpha: 1.0 - t,
                beta: t,
                gamma: 0.0,
            },
            ScheduleKind::SnrBridge { beta_min, beta_max } => {
                let vp = VpNoise { beta_min, beta_max };
                let ratio = vp.snr_ratio(t);
                let a = vp.signal(t);
                let a_end = vp.signal(1.0);
                let sigma2 = vp.noise_var(t);
                Weights {
                    alpha: a * (1.0 - ratio),
                    beta: a / a_end * ratio,
                    gamma: math::sqrt((sigma2 * (1.0 - ratio)).max(0.0)),
                }
            }
        })
    }

    /// Analytic time derivatives; `t` is clamped into the clip zone (with a log warning).
    pub fn eval_derivatives(&self, t: f64) -> Result<Rates> {
        check_time(t)?;
        let tc = self.clamp_time(t);
        let clamped = tc != t;
        if clamped {
            log::warn!("derivative requested at t = {t} inside the endpoint clip zone; evaluated at {tc}");
        }
        let t = tc;
        let (alpha_dot, beta_dot, gamma_dot) = match self.kind {
            ScheduleKind::LinearBridge { gamma_max } => {
                let gd = if gamma_max == 0.0 {
                    0.0
                } else {
                    gamma_max * (1.0 - 2.0 * t) / (2.0 * math::sqrt(t * (1.0 - t)))
                };
                (-1.0, 1.0, gd)
            }
            ScheduleKind::RectifiedFlow => (-1.0, 1.0, 0.0),
            ScheduleKind::SnrBridge { beta_min, beta_max } => {
                let vp = VpNoise { beta_min, beta_max };
                let rate = vp.rate(t);
                let a = vp.signal(t);
                let a_dot = -0.5 * rate * a;
                let a_end = vp.signal(1.0);
                let ratio = vp.snr_ratio(t);
                // ratio = SNR_1 * (exp(B) - 1)  =>  ratio' = SNR_1 * B' * exp(B)
                let ratio_dot = vp.snr(1.0) * rate * math::exp(vp.integral(t));
                let sigma2 = vp.noise_var(t);
                let sigma2_dot = rate * a * a;
                let gamma2 = sigma2 * (1.0 - ratio);
                let gamma2_dot = sigma2_dot * (1.0 - ratio) - sigma2 * ratio_dot;
                (
                    a_dot * (1.0 - ratio) - a * ratio_dot,
                    (a_dot * ratio + a * ratio_dot) / a_end,
                    gamma2_dot / (2.0 * math::sqrt(gamma2)),
                )
            }
        };
        Ok(Rates {
            alpha_dot,
            beta_dot,
            gamma_dot,
            clamped,
        })
    }

    /// Signal-to-noise ratio `a_t^2 / sigma_t^2` of the underlying diffusion
    /// (SNR bridge only).
    pub fn signal_to_noise(&self, t: f64) -> Option<f64> {
        match self.kind {
            ScheduleKind::SnrBridge { beta_min, beta_max } => Some(VpNoise { beta_min, beta_max }.snr(t)),
            _ => None,
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange { t })
    }
}

/// Variance-preserving noise with rate `beta(t) = beta_min + (beta_max - beta_min) t`.
#[derive(Debug, Clone, Copy)]
struct VpNoise {
    beta_min: f64,
    beta_max: f64,
}

impl VpNoise {
    fn rate(&self, t: f64) -> f64 {
        self.beta_min + (self.beta_max - self.beta_min) * t
    }

    /// `B(t) = int_0^t beta(s) ds`
    fn integral(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    fn signal(&self, t: f64) -> f64 {
        math::exp(-0.5 * self.integral(t))
    }

    fn noise_var(&self, t: f64) -> f64 {
        -math::expm1(-self.integral(t))
    }

    fn snr(&self, t: f64) -> f64 {
        1.0 / math::expm1(self.integral(t))
    }

    /// `SNR_1 / SNR_t`, written as `SNR_1 (e^B - 1)` so it is exact at `t = 0`.
    fn snr_ratio(&self, t: f64) -> f64 {
        if t == 1.0 {
            return 1.0;
        }
        self.snr(1.0) * math::expm1(self.integral(t))
    }
}

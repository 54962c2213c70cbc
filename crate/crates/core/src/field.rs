//! The evaluable-drift interface.
//!
//! Samplers, the analysis harness and the CLI only ever see a [`VelocityField`];
//! whether it is the closed-form Gaussian oracle, a trained network or a
//! hand-written linear field is irrelevant to them.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::vector;

/// Everything a field can say about one `(t, z, z_T)` query.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOutput {
    pub velocity: Vec<f64>,
    /// Conditional score `grad_z log p(z_t | z_T)`.
    pub score: Option<Vec<f64>>,
    /// `E[z_0 | z_t, z_T]`.
    pub posterior_mean: Option<Vec<f64>>,
    /// `E[eps | z_t, z_T]`.
    pub noise_mean: Option<Vec<f64>>,
}

impl FieldOutput {
    pub fn velocity_only(velocity: Vec<f64>) -> Self {
        Self {
            velocity,
            score: None,
            posterior_mean: None,
            noise_mean: None,
        }
    }

    /// Builds a fully populated output. The score is derived as `-noise_mean / gamma`
    /// and left empty when `gamma == 0`.
    pub fn from_means(velocity: Vec<f64>, posterior_mean: Vec<f64>, noise_mean: Vec<f64>, gamma: f64) -> Self {
        let score = (gamma > 0.0).then(|| noise_mean.iter().map(|u| -u / gamma).collect());
        Self {
            velocity,
            score,
            posterior_mean: Some(posterior_mean),
            noise_mean: Some(noise_mean),
        }
    }

    pub fn dim(&self) -> usize {
        self.velocity.len()
    }

    /// Checks that every populated vector has the velocity's dimension and that
    /// `score == -noise_mean / gamma` exactly when both are present.
    pub fn check_consistency(&self, gamma: f64) -> Result<()> {
        let d = self.dim();
        for v in [&self.score, &self.posterior_mean, &self.noise_mean]
            .into_iter()
            .flatten()
        {
            check_dim(d, v.len())?;
        }
        if let (Some(s), Some(u)) = (&self.score, &self.noise_mean) {
            if s.iter().zip(u).any(|(s, u)| *s != -u / gamma) {
                return Err(Error::Unsupported(
                    "score and noise mean disagree (score != -noise_mean / gamma)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A drift `v(t, z, z_T)`, optionally conditioned on an auxiliary vector.
pub trait VelocityField: Sync {
    /// Latent dimension of `z` (and of `z_T`).
    fn dim(&self) -> usize;

    fn evaluate(&self, t: f64, z: &[f64], endpoint: &[f64], condition: Option<&[f64]>) -> Result<FieldOutput>;

    fn velocity(&self, t: f64, z: &[f64], endpoint: &[f64], condition: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(self.evaluate(t, z, endpoint, condition)?.velocity)
    }

    /// Dimension of the auxiliary condition, or zero when the field ignores it.
    fn condition_dim(&self) -> usize {
        0
    }
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, t: f64, z: &[f64], endpoint: &[f64], condition: Option<&[f64]>) -> Result<FieldOutput> {
        (**self).evaluate(t, z, endpoint, condition)
    }
    fn condition_dim(&self) -> usize {
        (**self).condition_dim()
    }
}

impl<F: VelocityField + ?Sized + Send> VelocityField for alloc::boxed::Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, t: f64, z: &[f64], endpoint: &[f64], condition: Option<&[f64]>) -> Result<FieldOutput> {
        (**self).evaluate(t, z, endpoint, condition)
    }
    fn condition_dim(&self) -> usize {
        (**self).condition_dim()
    }
}

/// `v(t, z) = A z + b`, independent of time and endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    dim: usize,
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl LinearField {
    /// `matrix` is row-major `dim x dim`.
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let dim = offset.len();
        check_dim(dim * dim, matrix.len())?;
        Ok(Self { dim, matrix, offset })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut matrix = alloc::vec![0.0; d * d];
        for (i, v) in diag.iter().enumerate() {
            matrix[i * d + i] = *v;
        }
        Self {
            dim: d,
            matrix,
            offset: alloc::vec![0.0; d],
        }
    }

    /// `v = rate * z`, e.g. `rate = -1` for the decay field.
    pub fn scalar(dim: usize, rate: f64) -> Self {
        Self::diagonal(&alloc::vec![rate; dim])
    }

    pub fn zero(dim: usize) -> Self {
        Self::scalar(dim, 0.0)
    }
}

impl VelocityField for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, _t: f64, z: &[f64], _endpoint: &[f64], _condition: Option<&[f64]>) -> Result<FieldOutput> {
        check_dim(self.dim, z.len())?;
        let mut v = vector::matvec(&self.matrix, self.dim, self.dim, z);
        vector::axpy(1.0, &self.offset, &mut v);
        Ok(FieldOutput::velocity_only(v))
    }
}

//! Two-domain toy worlds sharing a latent `y`: `x_i = D_i(y) + noise`.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{check_dim, invalid, Error, Result};
use crate::field::VelocityField;
use crate::math;
use crate::oracle::{GaussianDomain, GaussianOracle};
use crate::rng::{self, BridgeRng};
use crate::sampler::{self, SamplerConfig};
use crate::schedule::Schedule;
use crate::vector;

/// Invertible map from the latent space to one domain.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum DomainMap {
    /// `A y + shift`, with `A` row-major.
    Affine { matrix: Vec<f64>, shift: Vec<f64> },
    /// `A w(y) + shift` with `w(u) = u + warp tanh(u)` per coordinate, `warp > -1`.
    Warped {
        matrix: Vec<f64>,
        shift: Vec<f64>,
        warp: f64,
    },
}

impl DomainMap {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        DomainMap::Affine {
            matrix,
            shift: vec![0.0; dim],
        }
    }

    /// Planar rotation by `angle` followed by uniform `scale` and a shift.
    pub fn rotation(angle: f64, scale: f64, shift: [f64; 2]) -> Self {
        let (s, c) = (math::sin(angle), math::cos(angle));
        DomainMap::Affine {
            matrix: vec![scale * c, -scale * s, scale * s, scale * c],
            shift: shift.to_vec(),
        }
    }

    fn parts(&self) -> (&[f64], &[f64], f64) {
        match self {
            DomainMap::Affine { matrix, shift } => (matrix, shift, 0.0),
            DomainMap::Warped { matrix, shift, warp } => (matrix, shift, *warp),
        }
    }

    pub fn dim(&self) -> usize {
        self.parts().1.len()
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, DomainMap::Affine { .. })
    }

    fn matrix(&self) -> DMatrix<f64> {
        let (m, s, _) = self.parts();
        DMatrix::from_row_slice(s.len(), s.len(), m)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, s, warp) = self.parts();
        let d = s.len();
        if d == 0 || m.len() != d * d {
            return Err(invalid("matrix", format!("expected {d}x{d} entries, got {}", m.len())));
        }
        if !(warp > -1.0 && warp.is_finite()) {
            return Err(invalid("warp", "must be finite and greater than -1"));
        }
        let sv = self.matrix().singular_values();
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if !(smin > 1e-12) {
            return Err(invalid("matrix", "domain map must be invertible"));
        }
        Ok(())
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let (m, s, warp) = self.parts();
        let w: Vec<f64> = y.iter().map(|u| u + warp * math::tanh(*u)).collect();
        let mut x = vector::matvec(m, s.len(), s.len(), &w);
        vector::axpy(1.0, s, &mut x);
        x
    }

    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (_, s, warp) = self.parts();
        check_dim(s.len(), x.len())?;
        let rhs = nalgebra::DVector::from_iterator(s.len(), x.iter().zip(s).map(|(a, b)| a - b));
        let w = self
            .matrix()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("domain map".to_string()))?;
        Ok(w.iter().map(|&v| unwarp(v, warp)).collect())
    }

    /// `(Lip(D), Lip(D^-1))` from the extreme singular values and warp slopes.
    pub fn lipschitz(&self) -> (f64, f64) {
        let (_, _, warp) = self.parts();
        let sv = self.matrix().singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let (slope_lo, slope_hi) = if warp >= 0.0 {
            (1.0, 1.0 + warp)
        } else {
            (1.0 + warp, 1.0)
        };
        (smax * slope_hi, slope_lo.recip() / smin)
    }
}

/// Solves `u + a tanh(u) = v` by safeguarded Newton iteration.
fn unwarp(v: f64, a: f64) -> f64 {
    if a == 0.0 {
        return v;
    }
    let mut u = v / (1.0 + a.max(0.0));
    for _ in 0..60 {
        let th = math::tanh(u);
        let f = u + a * th - v;
        let df = 1.0 + a * (1.0 - th * th);
        let step = f / df;
        u -= step;
        if step.abs() <= 1e-15 * (1.0 + u.abs()) {
            break;
        }
    }
    u
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum LatentPrior {
    Gaussian {
        mean: Vec<f64>,
        std: f64,
    },
    /// Equal-weight mixture of isotropic components.
    Mixture {
        centers: Vec<Vec<f64>>,
        std: f64,
    },
}

impl LatentPrior {
    pub fn default_mixture() -> Self {
        LatentPrior::Mixture {
            centers: vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
            std: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LatentPrior::Gaussian { mean, .. } => mean.len(),
            LatentPrior::Mixture { centers, .. } => centers.first().map_or(0, Vec::len),
        }
    }

    pub fn sample(&self, rng: &mut BridgeRng) -> Vec<f64> {
        let (center, std) = match self {
            LatentPrior::Gaussian { mean, std } => (mean, *std),
            LatentPrior::Mixture { centers, std } => {
                let k = ((rng::uniform(rng) * centers.len() as f64) as usize).min(centers.len() - 1);
                (&centers[k], *std)
            }
        };
        center.iter().map(|c| c + std * rng::standard_normal(rng)).collect()
    }

    fn validate(&self) -> Result<()> {
        let (ok, std) = match self {
            LatentPrior::Gaussian { mean, std } => (!mean.is_empty(), *std),
            LatentPrior::Mixture { centers, std } => (
                !centers.is_empty() && centers.iter().all(|c| c.len() == centers[0].len() && !c.is_empty()),
                *std,
            ),
        };
        if !ok {
            return Err(invalid("prior", "components must be nonempty and of equal dimension"));
        }
        if !(std >= 0.0 && std.is_finite()) {
            return Err(invalid("std", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ToyWorld {
    pub latent_dim: usize,
    pub maps: [DomainMap; 2],
    pub prior: LatentPrior,
    #[cfg_attr(feature = "serde", serde(default))]
    pub appearance_noise: [f64; 2],
}

/// One paired draw: the shared latent and its two renderings.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub y: Vec<f64>,
    pub x: [Vec<f64>; 2],
}

impl ToyWorld {
    pub fn new(maps: [DomainMap; 2], prior: LatentPrior, appearance_noise: [f64; 2]) -> Result<Self> {
        let world = Self {
            latent_dim: prior.dim(),
            maps,
            prior,
            appearance_noise,
        };
        world.validate()?;
        Ok(world)
    }

    /// 1D world with `x_i = scale_i y + shift_i` and `y ~ N(0, 1)`.
    pub fn gaussian_1d(scale: [f64; 2], shift: [f64; 2]) -> Result<Self> {
        let map = |i: usize| DomainMap::Affine {
            matrix: vec![scale[i]],
            shift: vec![shift[i]],
        };
        Self::new(
            [map(0), map(1)],
            LatentPrior::Gaussian {
                mean: vec![0.0],
                std: 1.0,
            },
            [0.0, 0.0],
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        for m in &self.maps {
            m.validate()?;
            check_dim(self.latent_dim, m.dim())?;
        }
        check_dim(self.latent_dim, self.prior.dim())?;
        if self.appearance_noise.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("appearance_noise", "must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn is_noiseless(&self, domain: usize) -> bool {
        self.appearance_noise[domain] == 0.0
    }

    /// Draws one pair from `rng`.
    pub fn draw(&self, rng: &mut BridgeRng) -> Pair {
        let y = self.prior.sample(rng);
        let x = [0, 1].map(|i| {
            let mut x = self.maps[i].apply(&y);
            if self.appearance_noise[i] > 0.0 {
                for v in x.iter_mut() {
                    *v += self.appearance_noise[i] * rng::standard_normal(rng);
                }
            }
            x
        });
        Pair { y, x }
    }

    /// `n` pairs; pair `k` uses stream `(seed, k)`.
    pub fn sample_pairs(&self, n: usize, seed: u64) -> Result<Vec<Pair>> {
        if n == 0 {
            return Err(invalid("n", "need at least one pair"));
        }
        Ok((0..n as u64).map(|k| self.draw(&mut rng::stream(seed, k))).collect())
    }

    /// Exact bridge field for domain `target` conditioned on the latent endpoint:
    /// `x | y ~ N(shift + A y, noise^2 I)`. Only affine maps have one.
    pub fn oracle_field(&self, target: usize, schedule: Schedule) -> Result<GaussianOracle> {
        let DomainMap::Affine { matrix, shift } = &self.maps[target] else {
            return Err(Error::Unsupported(
                "warped domain maps have no closed-form bridge field".to_string(),
            ));
        };
        let d = self.latent_dim;
        let var = self.appearance_noise[target] * self.appearance_noise[target];
        let domain = GaussianDomain::isotropic(shift.clone(), var)?.with_gain(DMatrix::from_row_slice(d, d, matrix))?;
        Ok(GaussianOracle::new(domain, schedule))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum EncoderHandle {
    #[default]
    Oracle,
    /// Inverse map plus an error of norm exactly `delta_scale` in a random direction.
    Perturbed { delta_scale: f64 },
}

impl EncoderHandle {
    pub fn delta(&self) -> f64 {
        match self {
            EncoderHandle::Oracle => 0.0,
            EncoderHandle::Perturbed { delta_scale } => *delta_scale,
        }
    }

    pub fn encode(&self, world: &ToyWorld, x: &[f64], domain: usize, rng: &mut BridgeRng) -> Result<Vec<f64>> {
        let mut y = world.maps[domain].inverse(x)?;
        if let EncoderHandle::Perturbed { delta_scale } = *self {
            if !(delta_scale >= 0.0) {
                return Err(invalid("delta_scale", "must be nonnegative"));
            }
            if delta_scale > 0.0 {
                let u = rng::unit_vector(rng, y.len());
                vector::axpy(delta_scale, &u, &mut y);
            }
        }
        Ok(y)
    }
}

/// Maps generated latents to outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum Decoder {
    #[default]
    Identity,
    /// `z + eps tanh(z) / sqrt(d)`: error at most `eps`, Lipschitz `1 + eps / sqrt(d)`.
    TanhPerturbed { eps: f64 },
}

impl Decoder {
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        match *self {
            Decoder::Identity => z.to_vec(),
            Decoder::TanhPerturbed { eps } => {
                let k = eps / math::sqrt(z.len() as f64);
                z.iter().map(|v| v + k * math::tanh(*v)).collect()
            }
        }
    }

    /// Uniform bound on `|decode(z) - z|`.
    pub fn error_bound(&self) -> f64 {
        match *self {
            Decoder::Identity => 0.0,
            Decoder::TanhPerturbed { eps } => eps.abs(),
        }
    }

    pub fn lipschitz(&self, dim: usize) -> f64 {
        match *self {
            Decoder::Identity => 1.0,
            Decoder::TanhPerturbed { eps } => 1.0 + eps.abs() / math::sqrt(dim as f64),
        }
    }
}

/// Result of one encode, translate, decode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub oracle_latent: Vec<f64>,
    pub encoded: Vec<f64>,
    pub generated: Vec<f64>,
    pub decoded: Vec<f64>,
    pub truth: Vec<f64>,
    pub error: f64,
}

/// Encodes `pair.x[source]`, runs the target bridge from that endpoint and decodes.
#[allow(clippy::too_many_arguments)]
pub fn translate_pipeline<F: VelocityField + ?Sized>(
    world: &ToyWorld,
    target_field: &F,
    handle: &EncoderHandle,
    decoder: &Decoder,
    pair: &Pair,
    source: usize,
    cfg: &SamplerConfig,
    rng: &mut BridgeRng,
) -> Result<PipelineOutput> {
    if source > 1 {
        return Err(invalid("source", "domain index must be 0 or 1"));
    }
    let target = 1 - source;
    let oracle_latent = world.maps[source].inverse(&pair.x[source])?;
    let encoded = handle.encode(world, &pair.x[source], source, rng)?;
    let generated = sampler::translate(None::<&F>, target_field, &encoded, None, cfg)?.latent;
    let decoded = decoder.decode(&generated);
    let truth = pair.x[target].clone();
    let error = vector::distance(&decoded, &truth);
    Ok(PipelineOutput {
        oracle_latent,
        encoded,
        generated,
        decoded,
        truth,
        error,
    })
}

//! Deterministic random streams.
//!
//! Every stochastic unit of work (an SDE trajectory, a bound trial, a training run)
//! gets its own ChaCha stream keyed by `(seed, index)`, so ensemble results do not
//! depend on evaluation order or thread scheduling.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

pub type BridgeRng = ChaCha8Rng;

/// Independent stream `index` derived from `seed`.
pub fn stream(seed: u64, index: u64) -> BridgeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn standard_normal(rng: &mut BridgeRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut BridgeRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| standard_normal(rng)).collect()
}

/// Uniform on `[0, 1)`.
pub fn uniform(rng: &mut BridgeRng) -> f64 {
    rand_distr::Uniform::new(0.0, 1.0).expect("valid range").sample(rng)
}

/// A uniformly distributed unit vector.
pub fn unit_vector(rng: &mut BridgeRng, dim: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, dim);
        let n = crate::vector::norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

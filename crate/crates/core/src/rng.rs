//! Seed derivation and seeded draws. Every random draw in the crate goes
//! through a ChaCha8 stream keyed by a derived seed, so results depend only on
//! the root seed and the logical position of the draw.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Real;

/// Mixes `stream` into `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_grid<T: Real>(dim: (usize, usize), sigma: T, seed: u64) -> Array2<T> {
    if sigma == T::zero() {
        return Array2::zeros(dim);
    }
    let mut rng = rng_for(seed);
    let normal = Normal::new(0.0, sigma.as_f64()).expect("sigma is finite and non-negative");
    Array2::from_shape_fn(dim, |_| T::of(normal.sample(&mut rng)))
}

pub fn uniform_grid<T: Real>(dim: (usize, usize), lo: f64, hi: f64, seed: u64) -> Array2<T> {
    let mut rng = rng_for(seed);
    Array2::from_shape_fn(dim, |_| T::of(rng.random_range(lo..hi)))
}

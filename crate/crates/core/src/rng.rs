//! Seeded random streams.
//!
//! Every random draw in the crate comes from SplitMix64 (64-bit state advanced
//! by the constant 0x9E3779B97F4A7C15, output passed through the
//! Stafford variant-13 mixer). The stream for a seed is a pure function of a
//! counter, so any language can reproduce it.

use rand::{Rng, SeedableRng};
pub use rand_xoshiro::SplitMix64;

use crate::tensor::{Scalar, Tensor};

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Independent stream derived from `seed` and a label index.
pub fn substream(seed: u64, label: u64) -> SplitMix64 {
    let mut parent = seeded(seed ^ label.wrapping_mul(0xD1B5_4A32_D192_ED03));
    seeded(rand::RngCore::next_u64(&mut parent))
}

/// Tensor with entries drawn uniformly from `[lo, hi)`.
pub fn uniform(shape: &[usize], lo: Scalar, hi: Scalar, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

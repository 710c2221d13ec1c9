//! Seeded randomness with named derivation.
//!
//! Every random draw in the pipeline flows from one configured run seed.
//! Sub-streams are derived by hashing a purpose label (and optional index)
//! into the base seed, so any stage can be reproduced in isolation and
//! resuming a run does not depend on serialized RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derive a sub-seed for a named purpose.
pub fn derive_seed(base: u64, purpose: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET, &base.to_le_bytes());
    fnv1a(h, purpose.as_bytes())
}

/// Derive a sub-seed for a named purpose at an index (per step, per sample, ...).
pub fn derive_seed_at(base: u64, purpose: &str, index: u64) -> u64 {
    fnv1a(derive_seed(base, purpose), &index.to_le_bytes())
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn rng_for(base: u64, purpose: &str) -> Rng {
    rng_from(derive_seed(base, purpose))
}

pub fn rng_for_at(base: u64, purpose: &str, index: u64) -> Rng {
    rng_from(derive_seed_at(base, purpose, index))
}

/// Fill a buffer with standard-normal draws.
pub fn fill_standard_normal(rng: &mut Rng, out: &mut [f32]) {
    use rand::Rng as _;
    for v in out.iter_mut() {
        *v = rng.sample::<f32, _>(rand_distr::StandardNormal);
    }
}

/// One gamma draw with the given shape and scale.
pub fn gamma_draw(rng: &mut Rng, shape: f64, scale: f64) -> f64 {
    use rand::Rng as _;
    let g = rand_distr::Gamma::new(shape, scale).expect("gamma parameters must be positive");
    rng.sample(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_purpose_sensitive() {
        assert_eq!(derive_seed(2025, "x"), derive_seed(2025, "x"));
        assert_ne!(derive_seed(2025, "x"), derive_seed(2025, "y"));
        assert_ne!(derive_seed(2025, "x"), derive_seed(2026, "x"));
        assert_ne!(derive_seed_at(2025, "x", 0), derive_seed_at(2025, "x", 1));
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = rng_from(7);
        let mut b = rng_from(7);
        let mut xa = [0f32; 16];
        let mut xb = [0f32; 16];
        fill_standard_normal(&mut a, &mut xa);
        fill_standard_normal(&mut b, &mut xb);
        assert_eq!(xa, xb);
    }
}

//! Seeded RNG streams.
//!
//! Every stochastic component takes a `(seed, salt)` pair and derives an
//! independent ChaCha stream, so trajectories, ensemble members and training
//! runs are reproducible and order-independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent RNG stream for (`seed`, `salt`).
pub fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed) ^ splitmix64(salt.wrapping_add(0xa5a5_a5a5_a5a5_a5a5)))
}

/// Stable 64-bit FNV-1a hash, used to fingerprint configurations in output
/// file headers.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = stream(7, 0).random();
        let b: f64 = stream(7, 0).random();
        let c: f64 = stream(7, 1).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

//! Named random streams derived from a single run seed.
//!
//! Each consumer ("crop", "timestep", "noise", "init", ...) draws from its own
//! ChaCha stream keyed by `(seed, name)`, so adding draws in one consumer never
//! shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSplitter {
    seed: u64,
}

impl SeedSplitter {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derived 64-bit seed for a named purpose.
    pub fn derive(&self, name: &str) -> u64 {
        splitmix(self.seed ^ splitmix(fnv1a(name.as_bytes())))
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        StreamRng::seed_from_u64(self.derive(name))
    }

    /// A stream keyed by name and an index, e.g. one per image.
    pub fn indexed(&self, name: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(splitmix(self.derive(name).wrapping_add(splitmix(index))))
    }
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    SeedSplitter::new(seed).stream(name)
}

pub fn gaussian_vec(rng: &mut StreamRng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect()
}

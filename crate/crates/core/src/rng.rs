//! Seed fan-out.
//!
//! Every random draw in a run descends from one root seed. Consumers ask for
//! a named substream and get an independent ChaCha stream, so adding a new
//! consumer never perturbs the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Independent generator for `name`.
    pub fn stream(&self, name: &str) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }

    /// Child tree whose root is derived from `name`; for nested fan-out such
    /// as one stream per (episode, iteration).
    pub fn child(&self, name: &str) -> SeedTree {
        SeedTree {
            root: splitmix(self.root ^ fnv1a(name.as_bytes())),
        }
    }

    /// A plain `u64` seed for APIs that take one.
    pub fn seed(&self, name: &str) -> u64 {
        splitmix(self.child(name).root)
    }
}

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

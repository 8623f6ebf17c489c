//! Split-tree seeding.
//!
//! Every random decision in the crate draws from a generator created out of a
//! [`SeedStream`]. A stream is the root seed plus the list of split indices
//! taken to reach it, so any component can hand independent, reproducible
//! child streams to its workers without sharing a global generator.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream {
    pub root_seed: u64,
    pub path: Vec<u64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl SeedStream {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            path: Vec::new(),
        }
    }

    /// Child stream at split `index`.
    pub fn derive(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self {
            root_seed: self.root_seed,
            path,
        }
    }

    /// Convenience for chained derivation, `s.derive_path(&[1, 2]) == s.derive(1).derive(2)`.
    pub fn derive_path(&self, indices: &[u64]) -> Self {
        indices.iter().fold(self.clone(), |s, &i| s.derive(i))
    }

    /// The 64-bit seed this stream denotes. Pure function of `(root_seed, path)`.
    ///
    /// Each level mixes the running state with the split index and the depth,
    /// so `[1, 2]` and `[2, 1]` land on different seeds.
    pub fn seed(&self) -> u64 {
        let mut state = splitmix64(self.root_seed);
        for (depth, &index) in self.path.iter().enumerate() {
            let salted = index
                .wrapping_mul(0xD6E8_FEB8_6659_FD93)
                .wrapping_add(depth as u64 + 1);
            state = splitmix64(state ^ splitmix64(salted));
        }
        state
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

/// Checked variant of [`SeedStream::derive`] for callers holding signed indices.
pub fn derive_seed(stream: &SeedStream, index: i64) -> crate::Result<SeedStream> {
    if index < 0 {
        return Err(crate::Error::InvalidArgument(format!(
            "seed split index must be non-negative, got {index}"
        )));
    }
    Ok(stream.derive(index as u64))
}

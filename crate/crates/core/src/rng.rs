//! Labeled random sub-streams derived from one run seed.
//!
//! Each consumer draws from its own ChaCha8 stream keyed by
//! SHA-256(seed ‖ label), so adding draws in one subsystem never shifts the
//! draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::identity::{hash_parts, NodeIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        let key = hash_parts(&[&self.seed.to_be_bytes(), label.as_bytes()]);
        ChaCha8Rng::from_seed(key.0)
    }

    pub fn node_stream(&self, label: &str, node: NodeIndex) -> ChaCha8Rng {
        self.stream(&format!("{label}/{node}"))
    }
}

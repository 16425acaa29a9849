//! Seeded random streams.
//!
//! Every random quantity in a run is drawn from a [`ChaCha8Rng`] whose seed is
//! derived from one root seed and a path of stream labels, e.g.
//! `root -> chain 3 -> filter block 17 -> replication 42`. Derivation is a
//! SplitMix64 fold over the path, so sibling streams are decorrelated and the
//! whole tree is reproducible from the root alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Well-known stream labels used by the samplers and experiments.
pub mod streams {
    pub const PROPOSAL: u64 = 1;
    pub const CRN_INIT: u64 = 2;
    pub const CRN_UPDATE: u64 = 3;
    pub const TRACE: u64 = 4;
    pub const PRIOR_INIT: u64 = 5;
    pub const REPLICATION: u64 = 6;
    pub const SIMULATION: u64 = 7;
    pub const CHAIN: u64 = 8;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a path of stream labels.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &label| {
        splitmix64(acc ^ splitmix64(label))
    })
}

/// Builds the generator for the stream at `path` below `root`.
pub fn stream(root: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

//! Seed derivation.
//!
//! Every random stream in an experiment is derived from one root seed by
//! mixing in a component name:
//!
//! ```text
//! derive(root, name) = splitmix64(root ^ fnv1a64(name))
//! ```
//!
//! FNV-1a and SplitMix64 are fixed published functions, so derived seeds are
//! stable across platforms and compiler versions (unlike `DefaultHasher`).
//! Nested components chain: `derive(derive(root, "stage_one"), "channel_2")`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(name: &str) -> u64 {
    name.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(root: u64, component: &str) -> u64 {
    splitmix64(root ^ fnv1a64(component))
}

pub fn derive_indexed(root: u64, component: &str, index: u64) -> u64 {
    splitmix64(derive(root, component) ^ splitmix64(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn component_rng(root: u64, component: &str) -> ChaCha8Rng {
    rng(derive(root, component))
}

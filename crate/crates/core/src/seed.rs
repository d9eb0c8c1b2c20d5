// SPDX-License-Identifier: Apache-2.0

//! Named seed derivation. Every random stream in the crate comes from a root
//! seed mixed with a component name and an index, so runs replay exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `(root, component, index)`.
pub fn derive_seed(root: u64, component: &str, index: u64) -> u64 {
    // FNV-1a over the component name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root ^ h) ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Random stream for a derived seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `stream(derive_seed(root, component, index))`.
pub fn derived_stream(root: u64, component: &str, index: u64) -> ChaCha8Rng {
    stream(derive_seed(root, component, index))
}

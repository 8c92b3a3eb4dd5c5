// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic seed derivation.
//!
//! Every random draw in the toolkit comes from a ChaCha8 stream whose seed is
//! derived from the master seed and a path of integer coordinates (run index,
//! window bounds, repetition index, ...). Seeds are therefore fixed before any
//! work is dispatched and results do not depend on the thread schedule.
//!
//! The mixing function is SplitMix64's finalizer applied to
//! `state ^ (coordinate + GOLDEN)` for each coordinate in turn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a coordinate path.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed.wrapping_add(GOLDEN)), |state, &c| {
        mix64(state ^ c.wrapping_add(GOLDEN))
    })
}

/// Seed for restart `run` of a best-of-n fit.
pub fn sub_seed(master: u64, run: usize) -> u64 {
    derive(master, &[run as u64])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Domain tags keep the seed streams of different stages disjoint.
pub(crate) const TAG_RANK: u64 = 0x5241_4e4b;
pub(crate) const TAG_SEARCH: u64 = 0x5345_4152;
pub(crate) const TAG_REFIT: u64 = 0x5245_4649;
pub(crate) const TAG_NETWORK: u64 = 0x4e45_5457;

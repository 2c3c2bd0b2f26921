// SPDX-License-Identifier: Apache-2.0

//! Seeded random streams.
//!
//! All randomness goes through ChaCha8 (`rand_chacha`), whose output for a
//! given 64-bit seed is fixed across platforms. Batch item `i` of a run
//! seeded with `s` uses the stream seeded with `s + i`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PatRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> PatRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for batch item `index`.
pub fn stream(seed: u64, index: u64) -> PatRng {
    seeded(seed.wrapping_add(index))
}

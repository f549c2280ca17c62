//! Seeded RNG streams. Every random draw in the library comes from a ChaCha8
//! stream derived from (master seed, purpose tag, index), so runs are
//! reproducible and independent of layer ordering or evaluation timing.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams disjoint even when their indices collide.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_DROPOUT: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_TLMNIST: u64 = 4;

/// Derive an independent RNG stream from the master seed.
pub fn stream(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&tag.to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

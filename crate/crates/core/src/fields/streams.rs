//! Reproducible stream splitting for parallel replication.
//!
//! One experiment seed feeds a counter-based generator; each (replicate,
//! channel) pair claims stream `replicate << 32 | channel`. Replicate `r`'s
//! full realization (channel 0) and its independent block draws (channel 1)
//! therefore never share a stream, and parallel execution order cannot
//! change what any replicate sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Channel for full-box realizations.
pub const CHANNEL_REALIZATION: u32 = 0;
/// Channel for independent single-block draws (Lindeberg estimation).
pub const CHANNEL_BLOCK: u32 = 1;

/// The generator for one (seed, replicate, channel) triple.
pub fn stream_rng(seed: u64, replicate: u32, channel: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 32) | channel as u64);
    rng
}

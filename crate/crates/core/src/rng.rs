//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the user seed and selected by
//! a 64-bit stream id, so replication `r` draws the same numbers whether it
//! runs alone, serially, or on any worker thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream-id namespaces. The high byte separates independent consumers of a
/// single seed; the low bits carry the replication or fold index.
pub mod domain {
    pub const REPLICATION: u64 = 0x01 << 56;
    pub const FOLDS: u64 = 0x02 << 56;
    pub const NOISE: u64 = 0x03 << 56;
    pub const CHECK: u64 = 0x04 << 56;
}

/// Generator type behind every keyed stream.
pub type StreamRng = ChaCha8Rng;

pub fn keyed_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    keyed_rng(seed, domain::REPLICATION | rep)
}

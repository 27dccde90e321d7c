use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Seeded generator for a named sub-stream, so independent consumers of one
/// seed never share random draws.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const NEGATIVES: u64 = 3;
    pub const BATCHES: u64 = 4;
    pub const KMEANS: u64 = 6;
    pub const SBM_EDGES: u64 = 7;
    pub const SBM_FEATURES: u64 = 8;
}

/// Like [`stream`], further keyed by an index (epoch, restart, ...).
pub fn substream(seed: u64, stream_id: u64, index: u64) -> Rng {
    stream(seed, (stream_id << 40) | (index & ((1 << 40) - 1)))
}

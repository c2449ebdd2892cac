//! Counter-based sub-seeding.
//!
//! Every unit of Monte-Carlo work (a chunk of channel samples, a chunk of ARQ episodes) gets its
//! own ChaCha stream selected by its index, so the result does not depend on how rayon splits the
//! work or how many threads it uses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Items per independently seeded chunk.
pub const CHUNK: usize = 1024;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `f` inside a dedicated pool with `workers` threads (0 keeps the current pool).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

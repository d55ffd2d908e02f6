use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for a top-level seed.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for replicate `index` of a seeded family. Replicates share the
/// key derived from `seed` and differ only in the ChaCha stream id, so their
/// outputs never overlap.
pub fn replicate(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a fresh seed for nested replication (e.g. a Monte Carlo run that
/// itself bootstraps).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    replicate(seed, index).next_u64()
}

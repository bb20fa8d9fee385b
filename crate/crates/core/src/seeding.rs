//! Deterministic RNG streams. Every random decision in a run derives from the
//! run seed plus a fixed stream id, so changing one consumer (say, the batch
//! order) never shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Interior = 2,
    Boundary = 3,
    Subset = 4,
    Batches = 5,
    Densify = 6,
    TestPoints = 7,
    Probe = 8,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

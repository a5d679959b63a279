//! Counter-based random streams.
//!
//! Every trajectory draws from its own generator keyed by
//! `(master seed, episode, batch, index)`. Keys never depend on scheduling,
//! so a batch sampled in parallel is bit-identical to the same batch sampled
//! serially.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator every sampler in the crate consumes.
pub type StreamRng = ChaCha8Rng;

/// Which batch of an episode a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Batch {
    /// Trajectories used for the return estimate (the N₂ batch).
    Returns,
    /// Trajectories used for the gradient direction (the N₁ batch).
    Gradient,
    /// Extra trajectories used only to log the objective.
    Evaluation,
    /// Streams for diagnostics and one-off sampling.
    Auxiliary(u32),
}

impl Batch {
    fn tag(self) -> u64 {
        match self {
            Batch::Returns => 1,
            Batch::Gradient => 2,
            Batch::Evaluation => 3,
            Batch::Auxiliary(k) => 0x100 + k as u64,
        }
    }
}

/// Identifies one independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamId {
    pub seed: u64,
    pub episode: u64,
    pub batch: Batch,
    pub index: u64,
}

impl StreamId {
    pub fn new(seed: u64, episode: u64, batch: Batch, index: u64) -> Self {
        Self {
            seed,
            episode,
            batch,
            index,
        }
    }

    /// Builds the generator for this stream. Distinct ids give distinct ChaCha keys.
    pub fn rng(&self) -> StreamRng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.episode.to_le_bytes());
        key[16..24].copy_from_slice(&self.batch.tag().to_le_bytes());
        key[24..].copy_from_slice(&self.index.to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }
}

/// Shorthand for a stream outside any training episode.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    StreamId::new(seed, 0, Batch::Auxiliary(0), index).rng()
}

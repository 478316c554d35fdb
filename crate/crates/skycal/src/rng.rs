//! Reproducible random number streams.
//!
//! Every stochastic stage draws from its own named stream derived from the
//! master seed, so adding draws to one stage (say, a longer chain) never
//! perturbs another (the synthetic data, the PIT randomization, the fold
//! shuffle). Streams use the ChaCha stream-id mechanism: same key, distinct
//! 64-bit stream index.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed stream ids for the pipeline's stochastic stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Hyperparameter search (restart perturbations and the like).
    Fit,
    /// MCMC chain `i` (one stream per chain).
    Chain(u64),
    /// Randomized PIT uniforms.
    Pit,
    /// Cross-validation fold assignment.
    Folds,
    /// Synthetic data generation: designs, truths, discrepancies.
    Synth,
    /// Per-cell Poisson count draws in replicate studies.
    Cell(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Fit => 1,
            Stream::Pit => 2,
            Stream::Folds => 3,
            Stream::Synth => 4,
            // Leave room between the families so they can grow independently.
            Stream::Chain(i) => 1_000 + i,
            Stream::Cell(i) => 1_000_000 + i,
        }
    }
}

/// RNG for one named stream under the given master seed.
pub fn stream_rng(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.id());
    rng
}

//! Seeded random streams.
//!
//! Every replication seed owns a ChaCha8 generator (a counter-based stream
//! cipher keyed by `seed_from_u64(seed)`); independent purposes within a
//! replication use distinct ChaCha stream ids, so drawing more inner samples
//! never shifts the observation or outer-sample streams. Gaussian variates use
//! the ziggurat transform from `rand_distr::StandardNormal`, which is
//! deterministic given the uniform stream on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

/// Purpose of a stream within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Observations = 0,
    Inner = 1,
    Outer = 2,
}

/// Generator for `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Seed of replication `index` under `base_seed`.
///
/// Plain offset, so adding replications never changes existing ones.
pub fn replication_seed(base_seed: u64, index: u64) -> u64 {
    base_seed.wrapping_add(index)
}

//! Seed derivation and the few sampling helpers shared by every stage.
//!
//! All randomness flows from one master seed. Streams for a given
//! (purpose, round, client) triple are derived by hashing, so the order in
//! which clients are scheduled never changes what they draw.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes mixed into derived seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Selection = 2,
    Client = 3,
    Data = 4,
    Partition = 5,
    Evaluation = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the master seed with a stream tag and two coordinates.
pub fn derive_seed(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream_rng(master: u64, stream: Stream, a: u64, b: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream, a, b))
}

/// Indices of one minibatch: `batch` distinct draws from `0..n`, or all of
/// `0..n` in random order when `batch >= n`.
pub fn sample_batch<R: rand::Rng + ?Sized>(rng: &mut R, n: usize, batch: usize) -> Vec<usize> {
    index::sample(rng, n, batch.min(n)).into_vec()
}

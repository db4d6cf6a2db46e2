//! Seeded random streams.
//!
//! Every source of randomness in a run is a ChaCha8 generator keyed by the
//! run's master seed. Independent consumers (dataset, validation set, weight
//! init, masks, evaluation draws) get distinct ChaCha *stream* ids, so the
//! sequences never overlap and adding draws to one consumer never shifts
//! another. ChaCha is counter-based: stream `s` of seed `x` is a fixed,
//! platform-independent sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named consumers of randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Secret,
    TrainData,
    ValData,
    Init,
    Masks,
    Eval,
    Corpus,
    /// Free-form stream ids for tests and ad-hoc tools. Offset past the named ids.
    Custom(u64),
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::Secret => 1,
            Stream::TrainData => 2,
            Stream::ValData => 3,
            Stream::Init => 4,
            Stream::Masks => 5,
            Stream::Eval => 6,
            Stream::Corpus => 7,
            Stream::Custom(c) => 1 << 32 | c,
        }
    }
}

/// Generator for `stream` under `master`.
pub fn stream_rng(master: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream.id());
    rng
}

/// Child master seed for the `index`-th run of a sweep (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids partition one seed into independent, replayable substreams.
pub(crate) const STREAM_TRAIN: u64 = 0;
pub(crate) const STREAM_FRESH: u64 = 1;
pub(crate) const STREAM_MULTITOKEN: u64 = 2;

pub(crate) fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

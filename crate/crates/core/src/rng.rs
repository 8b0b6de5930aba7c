//! Seeded random streams.
//!
//! Every random decision in a run comes from a ChaCha stream derived from the
//! run seed and a fixed list of labels, so that enabling or disabling one
//! consumer (e.g. masking) never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for `(seed, label, indices...)`, mixed with splitmix64.
pub fn stream(seed: u64, label: &str, indices: &[u64]) -> Rng {
    let mut h = splitmix(seed ^ 0x9e37_79b9_7f4a_7c15);
    for b in label.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    for &i in indices {
        h = splitmix(h ^ i);
    }
    seeded(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

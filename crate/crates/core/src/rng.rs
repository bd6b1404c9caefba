//! Counter-based random streams.
//!
//! Every random draw in a run comes from a generator keyed by a tuple of
//! integers (seed, sample, particle, step, ...), so results never depend on
//! how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a key tuple into a single 64-bit seed.
pub fn mix_key(key: &[u64]) -> u64 {
    key.iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &k| splitmix(acc ^ splitmix(k)))
}

/// A generator for the stream identified by `key`.
pub fn stream(key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(key))
}

/// Fill `out` with independent standard normal draws.
pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_standard_normal(rng, &mut v);
    v
}

// Stream tags keep the key spaces of different consumers apart.
pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_STEP: u64 = 2;
pub(crate) const TAG_MEASURE: u64 = 3;
pub(crate) const TAG_MASK: u64 = 4;
pub(crate) const TAG_DATA: u64 = 5;
pub(crate) const TAG_SAMPLE: u64 = 6;

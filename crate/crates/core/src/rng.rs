//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream selected by
//! `(seed, stream id)`; within a stream draws are consumed in step order.
//! Because the keystream is a pure function of `(key, stream, counter)`,
//! results never depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

/// Stream `id` under key `seed`.
pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// SplitMix64 finalizer, used to derive sub-keys from tuples of indices.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

pub fn uniform(rng: &mut Stream) -> f64 {
    use rand::Rng;
    rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = (0..4).map(|_| normal(&mut stream(7, 3))).collect();
        let mut s = stream(7, 3);
        let first = normal(&mut s);
        assert!(a.iter().all(|v| *v == first));
        let mut other = stream(7, 4);
        assert_ne!(normal(&mut other), first);
        assert_ne!(mix(1, 2), mix(2, 1));
    }
}

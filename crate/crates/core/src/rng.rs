//! Named random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream, keyed by
//! the master seed and a fixed label. Streams do not depend on the order in
//! which other streams are consumed.

use alloc::format;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(master: u64, label: &str) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(fnv1a(label));
    rng
}

/// Stream for the `index`-th member of a family, e.g. proxy `k` or trial `t`.
pub fn substream(master: u64, label: &str, index: u64) -> Stream {
    stream(master, &format!("{label}/{index}"))
}

/// Derives a child seed, used where a component takes a plain `u64` seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    use rand::RngCore;
    stream(master, label).next_u64()
}

//! Seeded, keyed random streams.
//!
//! Every consumer derives its generator from a root seed plus a key path, so
//! draws do not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn substream names into keys.
pub fn name_key(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Mixes a root seed with a key path into a 256-bit ChaCha seed.
pub fn keyed_seed(seed: u64, keys: &[u64]) -> [u8; 32] {
    let mut state = splitmix64(seed);
    for &k in keys {
        state = splitmix64(state ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    let mut out = [0u8; 32];
    let mut s = state;
    for chunk in out.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(keyed_seed(seed, keys))
}

/// Stream for a named purpose, e.g. `named_stream(seed, "train", &[step])`.
pub fn named_stream(seed: u64, name: &str, keys: &[u64]) -> ChaCha8Rng {
    let mut path = Vec::with_capacity(keys.len() + 1);
    path.push(name_key(name));
    path.extend_from_slice(keys);
    stream(seed, &path)
}

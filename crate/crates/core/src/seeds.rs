//! Named sub-seeds. Every random stream in the crate is derived from one
//! user seed so that components can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const AUGMENT: &str = "augment";
pub const NOISE: &str = "noise";

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable across platforms and compiler versions.
pub fn derive(seed: u64, name: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(splitmix(seed ^ h).wrapping_add(index))
}

pub fn rng(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, name, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_stable() {
        assert_eq!(derive(7, INIT, 0), derive(7, INIT, 0));
        assert_ne!(derive(7, INIT, 0), derive(7, SHUFFLE, 0));
        assert_ne!(derive(7, INIT, 0), derive(7, INIT, 1));
        assert_ne!(derive(7, INIT, 0), derive(8, INIT, 0));
    }
}

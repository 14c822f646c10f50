//! Stage seed derivation.
//!
//! Every random stage gets its own seed derived from the master seed and a
//! stable stage name, so reordering stages or adding routes never shifts the
//! randomness of unrelated work. FNV-1a hashes the name, splitmix64 whitens
//! the combination; both are fixed algorithms, so seeds are stable across
//! platforms and releases.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(name: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for byte in name.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named stage under the given master seed.
pub fn stage_seed(master: u64, stage: &str) -> u64 {
    splitmix64(master ^ fnv1a64(stage))
}

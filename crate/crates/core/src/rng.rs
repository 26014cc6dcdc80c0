use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a, used to derive per-item seeds from string ids.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rng for `seed` specialised to one item, so per-item draws do not depend on
/// iteration order.
pub(crate) fn seeded_for(seed: u64, item: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(item.as_bytes()).rotate_left(17))
}

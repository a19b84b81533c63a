//! Counter-based seed derivation.
//!
//! Every random object is generated from its own stream whose seed is a pure
//! function of `(master, role, index...)`, so the order in which trials are
//! scheduled never changes what they draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream roles. The discriminants are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Role {
    Support = 1,
    Signal = 2,
    Sensing = 3,
    Noise = 4,
    Quadform = 5,
    Grid = 6,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes the master seed with a role tag and two counters.
pub fn derive_seed(master: u64, role: Role, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ (role as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream(master: u64, role: Role, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, role, a, b))
}

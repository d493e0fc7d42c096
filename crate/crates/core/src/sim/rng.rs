//! Keyed random streams so draws do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Training = 1,
    Prosumer = 2,
    Consumer = 3,
    Renewable = 4,
    Init = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for (seed, purpose, t, bus, agent).
pub fn stream(seed: u64, purpose: Purpose, t: u64, bus: u64, agent: u64) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    let mut key = [0u8; 32];
    for (i, part) in [purpose as u64, t, bus, agent].into_iter().enumerate() {
        h = splitmix(h ^ part.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        key[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

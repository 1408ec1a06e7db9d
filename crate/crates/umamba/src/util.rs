//! Small shared helpers: deterministic seed derivation, CRC32, gaussian draws.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer. Good avalanche, stable across platforms.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a list of counters. Every random
/// draw in the crate is keyed this way, so any sample/step/draw is
/// reproducible in isolation and resume never needs saved stream state.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix(master ^ 0x75_6d_61_6d_62_61); // "umamba" salt
    for &t in tags {
        acc = splitmix(acc ^ t);
    }
    acc
}

pub fn seeded_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Purpose tags for [`derive_seed`]. Keeping them in one table guarantees two
/// different draw sites can never collide on the same child stream.
pub mod tag {
    pub const MODEL_INIT: u64 = 1;
    pub const ROOM: u64 = 2;
    pub const SOURCE: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const MIX: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const CROP: u64 = 7;
}

/// Standard normal via Box-Muller on uniform draws.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// CRC32 (IEEE, reflected), used as the checkpoint trailer.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xffff_ffff;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

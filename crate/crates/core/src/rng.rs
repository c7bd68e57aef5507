//! Deterministic random streams.
//!
//! Every simulation draws from a [`SimRng`] seeded through [`derive_seed`], so a
//! replication's stream depends only on the master seed and the identifiers of
//! the replication. Scheduling order across worker threads never changes which
//! numbers a replication sees.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator used for all simulation work.
pub type SimRng = Xoshiro256PlusPlus;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of identifiers
/// (cell id, replication id, ...). Distinct paths give unrelated seeds.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = mix64(master ^ GOLDEN);
    for (depth, &id) in path.iter().enumerate() {
        h = mix64(h.wrapping_add(GOLDEN.wrapping_mul(depth as u64 + 1)) ^ mix64(id));
    }
    h
}

/// Generator for the stream identified by `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

/// Stable 64-bit id for a label such as a distribution name, used in stream paths.
pub fn label_id(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

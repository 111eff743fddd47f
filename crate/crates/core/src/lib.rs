//! Training and evaluation engine for a geospatially-aware land-cover
//! classifier: a dual-branch MLP that fuses sinusoidal latitude/longitude
//! positional encodings with tabular reflectance features, disentangles
//! region-specific from region-invariant information via a supervised
//! contrastive loss, and is evaluated under extrapolation and
//! leave-one-region-out protocols.

pub mod data;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pca;
pub mod posenc;
pub mod scheme;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// FNV-1a 64-bit hash; used for checkpoint checksums and config/plan hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

//! Seeded random streams.
//!
//! Every random quantity comes from a `ChaCha8Rng` whose seed is a mix of a
//! base seed, a run/epoch index and a purpose tag, so independent consumers
//! never share a stream.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Name of the generator family, recorded in output headers.
pub const GENERATOR_NAME: &str = "ChaCha8Rng";

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for stream derivation.
pub mod tag {
    pub const DATA: u64 = 0x01;
    pub const OMEGA: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const WARM: u64 = 0x04;
    pub const BATCH: u64 = 0x05;
    pub const OUTPUT: u64 = 0x06;
    pub const PROBE: u64 = 0x07;
    pub const SGD: u64 = 0x08;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, index, purpose)`.
pub fn stream(seed: u64, index: u64, purpose: u64) -> StreamRng {
    let h = splitmix(splitmix(splitmix(seed) ^ index) ^ purpose.wrapping_mul(0xA24B_AED4_963E_E407));
    ChaCha8Rng::seed_from_u64(h)
}

/// d×r matrix of standard normals, filled column by column.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

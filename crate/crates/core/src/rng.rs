//! Deterministic random streams keyed by purpose rather than call order.
//!
//! Every consumer derives its generator from `(seed, purpose, cycle, index)`,
//! so two methods run on the same seed see identical truth, observation and
//! initial-perturbation noise regardless of what else was drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Matrix, Real};

/// Stream purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Truth = 1,
    Observation = 2,
    InitialEnsemble = 3,
    ModelError = 4,
    MemberSubset = 5,
    ModelDefinition = 6,
    Oracle = 7,
    Custom = 8,
    AnalysisObservation = 9,
    ModelNoise = 10,
}

/// SplitMix64 finalizer; spreads structured keys over the seed space.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one `(seed, purpose, cycle, index)` stream.
pub fn stream(seed: u64, purpose: Purpose, cycle: u64, index: u64) -> ChaCha8Rng {
    let key = mix(mix(mix(mix(seed) ^ purpose as u64) ^ cycle) ^ index);
    let mut bytes = [0u8; 32];
    for (k, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&mix(key ^ k as u64).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// `rows × cols` matrix of independent standard normal draws, filled
/// column by column.
pub fn standard_normal_matrix<T: Real, R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = T::lit(z);
    }
    m
}

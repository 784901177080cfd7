#![allow(dead_code)]

use mmkf_core::rng::{standard_normal_matrix, stream, Purpose};
use mmkf_core::{Matrix64, Vector64};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    stream(seed, Purpose::Oracle, 0, 0)
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix64 {
    standard_normal_matrix::<f64, _>(rng, rows, cols)
}

pub fn vector(rng: &mut ChaCha8Rng, n: usize) -> Vector64 {
    normal(rng, n, 1).column(0).into_owned()
}

/// `A·Aᵀ/n + floor·I`.
pub fn spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Matrix64 {
    let a = normal(rng, n, n);
    &a * a.transpose() / n as f64 + Matrix64::identity(n, n) * floor
}

/// `I + 0.3·Z`, well conditioned with high probability.
pub fn invertible(rng: &mut ChaCha8Rng, n: usize) -> Matrix64 {
    Matrix64::identity(n, n) + normal(rng, n, n) * (0.3 / (n as f64).sqrt())
}

pub fn rel(a: &Matrix64, b: &Matrix64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

mod common;

use common::{normal, rel, rng, spd, vector};
use mmkf_core::linalg::symmetric_sqrt;
use mmkf_core::model_error::{diagonal_basis, estimate_q_full_obs, estimate_q_least_squares};
use mmkf_core::{Matrix64, ModelErrorState};

/// Kalman filter on `x ← A·x + η` that uses and updates `Q̃` from its own
/// innovations; returns the final estimate.
fn adaptive_filter(a: &Matrix64, q: &Matrix64, r: &Matrix64, q0: f64, cycles: usize, seed: u64) -> Matrix64 {
    let n = a.nrows();
    let mut g = rng(seed);
    let q_root = symmetric_sqrt(q).unwrap();
    let r_root = symmetric_sqrt(r).unwrap();
    let h = Matrix64::identity(n, n);
    let mut state = ModelErrorState::isotropic(n, q0, 1e-3).unwrap();
    let mut truth = vector(&mut g, n);
    let mut mean = truth.clone();
    let mut p = Matrix64::identity(n, n);
    for _ in 0..cycles {
        truth = a * &truth + &q_root * vector(&mut g, n);
        let y = &truth + &r_root * vector(&mut g, n);
        let pp = a * &p * a.transpose();
        let pf = &pp + &state.q;
        mean = a * &mean;
        let d = &y - &mean;
        state.update(&d, r, &pp, &h).unwrap();
        let k = &pf * (&pf + r).try_inverse().unwrap();
        mean += &k * d;
        p = (Matrix64::identity(n, n) - &k) * &pf;
        p = (&p + p.transpose()) * 0.5;
    }
    state.q
}

#[test]
fn scalar_estimate_converges() {
    let a = Matrix64::from_element(1, 1, 0.9);
    let q = Matrix64::from_element(1, 1, 1.0);
    let r = Matrix64::from_element(1, 1, 0.5);
    let est = adaptive_filter(&a, &q, &r, 0.1, 20_000, 1);
    assert!(rel(&est, &q) < 0.3, "estimate {est}");
}

#[test]
fn three_dimensional_estimate_converges() {
    let a = Matrix64::from_row_slice(3, 3, &[0.8, 0.1, 0.0, -0.1, 0.7, 0.2, 0.0, 0.1, 0.9]);
    let q = Matrix64::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.8, 0.2, 0.0, 0.2, 0.6]);
    let r = Matrix64::identity(3, 3) * 0.4;
    let est = adaptive_filter(&a, &q, &r, 0.1, 20_000, 2);
    assert!(rel(&est, &q) < 0.3, "estimate {est}");
}

#[test]
fn closed_form_is_unbiased() {
    // d = H(A·e + η) + ν with e ~ N(0, Pᵃ): E[ddᵀ] = H(A Pᵃ Aᵀ + Q)Hᵀ + R.
    let mut g = rng(5);
    let n = 3;
    let a = Matrix64::identity(n, n) * 0.9 + normal(&mut g, n, n) * 0.1;
    let h = Matrix64::identity(n, n) + normal(&mut g, n, n) * 0.2;
    let pa = spd(&mut g, n, 0.1) * 0.3;
    let q = spd(&mut g, n, 0.5);
    let r = Matrix64::identity(n, n) * 0.2;
    let pp = &a * &pa * a.transpose();
    let (pa_root, q_root, r_root) = (
        symmetric_sqrt(&pa).unwrap(),
        symmetric_sqrt(&q).unwrap(),
        symmetric_sqrt(&r).unwrap(),
    );
    let draws = 20_000;
    let mut total = Matrix64::zeros(n, n);
    for _ in 0..draws {
        let err = &a * &pa_root * vector(&mut g, n) + &q_root * vector(&mut g, n);
        let d = &h * err + &r_root * vector(&mut g, n);
        total += estimate_q_full_obs(&d, &r, &pp, &h).unwrap();
    }
    let mean = total / draws as f64;
    assert!(rel(&mean, &q) < 0.05, "mean {mean}");
}

#[test]
fn least_squares_recovers_diagonal_q_from_partial_obs() {
    let n = 6;
    let q = Matrix64::from_diagonal(&mmkf_core::Vector64::from_vec(vec![0.5, 1.0, 1.5, 0.7, 0.9, 1.2]));
    let h = Matrix64::identity(n, n);
    let r = Matrix64::identity(n, n) * 0.1;
    let pp = Matrix64::zeros(n, n);
    let mut g = rng(9);
    let root = symmetric_sqrt(&(&q + &r)).unwrap();
    let basis = diagonal_basis::<f64>(n);
    let draws = 20_000;
    let mut total = Matrix64::zeros(n, n);
    for _ in 0..draws {
        let d = &root * vector(&mut g, n);
        total += estimate_q_least_squares(&d, &r, &pp, &h, &basis).unwrap().q;
    }
    assert!(rel(&(total / draws as f64), &q) < 0.05);
}

#[test]
fn unobserved_basis_directions_are_rank_deficient() {
    let n = 4;
    let h = Matrix64::from_fn(2, n, |i, j| if j == 2 * i { 1.0 } else { 0.0 });
    let d = mmkf_core::Vector64::from_vec(vec![1.0, -0.5]);
    let out = estimate_q_least_squares(&d, &(Matrix64::identity(2, 2) * 0.1), &Matrix64::zeros(n, n), &h, &diagonal_basis(n)).unwrap();
    assert!(out.rank_deficient);
    assert_eq!(out.coefficients[1], 0.0);
    assert_eq!(out.coefficients[3], 0.0);
}

mod common;

use mmkf_core::metrics::{crps_mean, crps_univariate, rmse};
use mmkf_core::{Ensemble, Matrix64, Vector64};
use proptest::prelude::*;

/// `∫ (F(x) − 1{x ≥ y})² dx` for the empirical CDF by exact piecewise
/// integration over the sorted breakpoints.
fn crps_by_integration(xs: &[f64], y: f64) -> f64 {
    let mut pts: Vec<f64> = xs.to_vec();
    pts.push(y);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let f = xs.iter().filter(|&&x| x <= mid).count() as f64 / n;
        let step = if mid >= y { 1.0 } else { 0.0 };
        total += (f - step).powi(2) * (w[1] - w[0]);
    }
    total
}

proptest! {
    #[test]
    fn pair_formula_matches_integral(xs in prop::collection::vec(-10.0f64..10.0, 1..40), y in -12.0f64..12.0) {
        let a = crps_univariate(&xs, y).unwrap();
        let b = crps_by_integration(&xs, y);
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a >= -1e-12);
    }

    #[test]
    fn crps_is_permutation_and_shift_invariant(mut xs in prop::collection::vec(-5.0f64..5.0, 2..20), y in -5.0f64..5.0, c in -3.0f64..3.0) {
        let a = crps_univariate(&xs, y).unwrap();
        xs.reverse();
        prop_assert!((crps_univariate(&xs, y).unwrap() - a).abs() < 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((crps_univariate(&shifted, y + c).unwrap() - a).abs() < 1e-9);
    }

    #[test]
    fn rmse_is_nonnegative_and_symmetric(v in prop::collection::vec(-5.0f64..5.0, 1..10)) {
        let a = Vector64::from_vec(v.clone());
        let b = Vector64::from_vec(v.iter().map(|x| x * 0.5 - 1.0).collect());
        let e = rmse(&a, &b).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!((e - rmse(&b, &a).unwrap()).abs() < 1e-15);
    }
}

#[test]
fn crps_mean_averages_rows() {
    let e = Ensemble::new(Matrix64::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 5.0, 4.0, 6.0])).unwrap();
    let t = Vector64::from_vec(vec![1.0, 4.0]);
    let expected = 0.5 * (crps_univariate(&[0.0, 1.0, 2.0], 1.0).unwrap() + crps_univariate(&[5.0, 4.0, 6.0], 4.0).unwrap());
    assert!((crps_mean(&e, &t).unwrap() - expected).abs() < 1e-15);
}

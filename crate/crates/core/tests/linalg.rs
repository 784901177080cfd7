mod common;

use common::{normal, rel, rng, spd};
use mmkf_core::linalg::localization::{build_localization, CrossClassRule, LocalizationSpec};
use mmkf_core::linalg::{nearest_psd, pseudoinverse, symmetric_sqrt, SymEig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn square_root_squares_back(seed in any::<u64>(), n in 1usize..=10) {
        let a = spd(&mut rng(seed), n, 0.0);
        let s = symmetric_sqrt(&a).unwrap();
        prop_assert!(rel(&(&s * &s), &a) < 1e-10);
        prop_assert!(rel(&s, &s.transpose()) < 1e-14);
    }

    #[test]
    fn pseudoinverse_satisfies_penrose(seed in any::<u64>(), rows in 1usize..=7, cols in 1usize..=7, rank in 1usize..=7) {
        let mut g = rng(seed);
        let k = rank.min(rows).min(cols);
        let a = normal(&mut g, rows, k) * normal(&mut g, k, cols);
        let p = pseudoinverse(&a);
        prop_assert!(rel(&(&a * &p * &a), &a) < 1e-8);
        prop_assert!(rel(&(&p * &a * &p), &p) < 1e-8);
        let ap = &a * &p;
        prop_assert!(rel(&ap, &ap.transpose()) < 1e-8);
    }

    #[test]
    fn nearest_psd_respects_floor(seed in any::<u64>(), n in 1usize..=8, eps in 0.0f64..0.5) {
        let z = normal(&mut rng(seed), n, n);
        let a = (&z + z.transpose()) * 0.5;
        let b = nearest_psd(&a, eps).unwrap();
        prop_assert!(SymEig::new(&b).min_value() >= eps - 1e-10);
        if SymEig::new(&a).min_value() >= eps {
            prop_assert!(rel(&b, &a) < 1e-10);
        }
    }

    #[test]
    fn ring_localization_is_psd(n in 4usize..=60, fraction in 0.02f64..0.25) {
        let radius = fraction * n as f64;
        let (spec, layout) = LocalizationSpec::single_ring(n, Some(radius));
        let rho = build_localization::<f64>(&spec, &layout).unwrap();
        prop_assert!(rho.diagonal().iter().all(|v| (*v - 1.0).abs() < 1e-15));
        prop_assert!(SymEig::new(&rho).min_value() >= -1e-8);
    }
}

#[test]
fn two_scale_parent_taper_is_psd() {
    let (spec, layout) = LocalizationSpec::two_scale(20, 10, Some(4.0), Some(40.0));
    assert!(matches!(spec.cross, CrossClassRule::ParentTaper { .. }));
    let rho = build_localization::<f64>(&spec, &layout).unwrap();
    assert_eq!(rho.nrows(), 220);
    assert!(SymEig::new(&rho).min_value() >= -1e-8);
}

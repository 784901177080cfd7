use super::{covariance_from_anomalies, ensemble_moments, Ensemble, Observation};
use crate::linalg::{checked_symmetric, solve_spd, symmetrize, SymEig};
use crate::{Error, Matrix, Real, Result, Vector};

/// Innovation covariances above this (estimated) condition number are
/// pseudo-solved through their eigendecomposition.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Result of one square-root analysis in moment form.
#[derive(Debug, Clone)]
pub struct SquareRootUpdate<T: Real> {
    pub mean: Vector<T>,
    /// Normalized analysis anomalies `T·X`.
    pub anomalies: Matrix<T>,
    /// `(I − KH)·P`, only when requested.
    pub covariance: Option<Matrix<T>>,
    /// Innovation `y − H·x̄` of the prior mean.
    pub innovation: Vector<T>,
    /// `H·P·Hᵀ` of the background covariance used.
    pub hpht: Matrix<T>,
    /// The innovation covariance had to be pseudo-solved.
    pub pseudo_solved: bool,
}

/// Left-multiplied ensemble square-root analysis.
///
/// `P = ρ ∘ (X·Xᵀ)`, `K = P·Hᵀ(H·P·Hᵀ + R)⁻¹`, the mean moves by `K·d` and
/// the anomalies are transformed by `T` with `T·P·Tᵀ = (I − KH)·P`.
pub fn esrf_analysis<T: Real>(
    prior: &Ensemble<T>,
    obs: &Observation<T>,
    rho: Option<&Matrix<T>>,
) -> Result<Ensemble<T>> {
    let (mean, x) = ensemble_moments(prior);
    let p = covariance_from_anomalies(&x, rho)?;
    let update = esrf_update(&mean, &x, &p, obs, false)?;
    Ensemble::from_moments(&update.mean, &update.anomalies)
}

/// Square-root update against an explicit background covariance `P`.
///
/// The anomaly transform is `T = S·(I − Z)^{1/2}·S†` with `S = P^{1/2}` and
/// `Z = S·Hᵀ(H·P·Hᵀ + R)⁻¹·H·S`; `Z` is symmetric with spectrum in `[0, 1]`.
pub fn esrf_update<T: Real>(
    mean: &Vector<T>,
    anomalies: &Matrix<T>,
    background: &Matrix<T>,
    obs: &Observation<T>,
    want_covariance: bool,
) -> Result<SquareRootUpdate<T>> {
    obs.validate()?;
    let n = mean.len();
    if anomalies.nrows() != n || background.shape() != (n, n) {
        return Err(Error::invalid("prior mean, anomalies and covariance disagree on dimension"));
    }
    let h = obs
        .h
        .matrix()
        .ok_or_else(|| Error::invalid("the square-root transform needs a linear observation operator"))?;
    if h.ncols() != n {
        return Err(Error::invalid(format!(
            "H expects {}-dimensional states, got {n}",
            h.ncols()
        )));
    }
    let p = checked_symmetric(background, "background covariance")?;

    let innovation = obs.innovation(mean)?;
    let hp = h * &p;
    let hpht = symmetrize(&(&hp * h.transpose()));
    let c = &hpht + &obs.r;

    let eig = SymEig::new(&p);
    let s = eig.sqrt();
    let hs = h * &s;

    let mut rhs = Matrix::zeros(c.nrows(), n + 1);
    rhs.column_mut(0).copy_from(&innovation);
    rhs.columns_mut(1, n).copy_from(&hs);
    let (sol, pseudo_solved) = solve_spd(
        &c,
        &rhs,
        T::lit(MAX_INNOVATION_CONDITION),
        "innovation covariance HPHᵀ + R",
    )?;

    let mean_a = mean + hp.transpose() * sol.column(0);
    let z = symmetrize(&(hs.transpose() * sol.columns(1, n)));
    let zeig = SymEig::new(&z);
    let root = zeig.map(|mu| (T::one() - mu.max(T::zero()).min(T::one())).sqrt());
    let transform = &s * root * eig.sqrt_pinv();
    let anomalies_a = &transform * anomalies;

    let covariance = if want_covariance {
        Some(symmetrize(&(&p - &s * &z * &s)))
    } else {
        None
    };

    if mean_a.iter().any(|v| !v.finite()) || anomalies_a.iter().any(|v| !v.finite()) {
        return Err(Error::numerical("analysis ensemble", "non-finite values after update"));
    }
    Ok(SquareRootUpdate {
        mean: mean_a,
        anomalies: anomalies_a,
        covariance,
        innovation,
        hpht,
        pseudo_solved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_ensemble(values: &[f64]) -> Ensemble<f64> {
        Ensemble::new(Matrix::from_row_slice(1, values.len(), values)).unwrap()
    }

    #[test]
    fn scalar_kalman_algebra() {
        // Mean 0, unbiased variance 1.
        let prior = scalar_ensemble(&[-1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
        let (_, x) = prior.moments();
        assert_relative_eq!((&x * x.transpose())[(0, 0)], 1.0, epsilon = 1e-14);
        let obs = Observation::linear(
            Vector::from_vec(vec![1.0]),
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
        )
        .unwrap();
        let post = esrf_analysis(&prior, &obs, None).unwrap();
        let (mean, xa) = post.moments();
        assert_relative_eq!(mean[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!((&xa * xa.transpose())[(0, 0)], 0.5, epsilon = 1e-14);
        // Anomalies shrink by √0.5.
        assert_relative_eq!(xa[(0, 0)] / x[(0, 0)], 0.5f64.sqrt(), epsilon = 1e-14);
    }

    fn random_instance(
        n: usize,
        members: usize,
        p: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Ensemble<f64>, Observation<f64>) {
        let e = Ensemble::new(Matrix::from_fn(n, members, |_, _| rng.random_range(-2.0..2.0))).unwrap();
        let h = Matrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let a = Matrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let r = &a * a.transpose() + Matrix::identity(p, p) * 0.2;
        let y = Vector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        (e, Observation::linear(y, r, h).unwrap())
    }

    #[test]
    fn uninformative_observations_leave_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (e, mut obs) = random_instance(4, 8, 3, &mut rng);
        obs.r *= 1e12;
        let post = esrf_analysis(&e, &obs, None).unwrap();
        assert!((post.mean() - e.mean()).amax() < 1e-5);
    }

    #[test]
    fn perfect_observations_pin_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (e, _) = random_instance(4, 8, 4, &mut rng);
        let y = Vector::from_vec(vec![0.3, -0.2, 1.0, 0.5]);
        let obs = Observation::linear(y.clone(), Matrix::identity(4, 4) * 1e-12, Matrix::identity(4, 4)).unwrap();
        let post = esrf_analysis(&e, &obs, None).unwrap();
        assert!((post.mean() - y).amax() < 1e-4);
    }

    #[test]
    fn covariance_identity_and_mean_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..30 {
            let n = 2 + trial % 6;
            let members = n + 2 + trial % 3;
            let p = 1 + trial % n;
            let (e, obs) = random_instance(n, members, p, &mut rng);
            let (mean, x) = e.moments();
            let pf = &x * x.transpose();
            let h = obs.h.matrix().unwrap().clone();
            let c = &h * &pf * h.transpose() + &obs.r;
            let k = &pf * h.transpose() * c.try_inverse().unwrap();
            let expected_cov = (Matrix::identity(n, n) - &k * &h) * &pf;
            let expected_mean = &mean + &k * (&obs.y - &h * &mean);

            let post = esrf_analysis(&e, &obs, None).unwrap();
            let (mean_a, xa) = post.moments();
            assert!(relative_frobenius(&(&xa * xa.transpose()), &expected_cov) < 1e-6);
            let rel = (&mean_a - &expected_mean).norm() / expected_mean.norm().max(1e-300);
            assert!(rel < 1e-10, "mean deviates by {rel}");
        }
    }

    #[test]
    fn inflated_scalar_gain_is_unchanged() {
        // With P and R both scaled by λ, K = λP/(λP + λR) = P/(P + R).
        let prior = scalar_ensemble(&[-1.0, 1.0]); // variance 2
        let y = Vector::from_vec(vec![3.0]);
        let base = Observation::linear(y.clone(), Matrix::from_element(1, 1, 1.0), Matrix::identity(1, 1)).unwrap();
        let lam = 2.5;
        let inflated = super::super::apply_inflation(&prior, lam).unwrap();
        let scaled = Observation::linear(y, Matrix::from_element(1, 1, lam), Matrix::identity(1, 1)).unwrap();
        let a = esrf_analysis(&prior, &base, None).unwrap().mean()[0];
        let b = esrf_analysis(&inflated, &scaled, None).unwrap().mean()[0];
        assert_relative_eq!(a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn nonlinear_operator_rejected_for_transform() {
        use super::super::ObservationOperator;
        use std::sync::Arc;
        let prior = scalar_ensemble(&[-1.0, 1.0]);
        let obs = Observation {
            y: Vector::from_vec(vec![1.0]),
            r: Matrix::identity(1, 1),
            h: ObservationOperator::Function {
                input_dim: 1,
                output_dim: 1,
                apply: Arc::new(|x: &Vector<f64>| x.map(|v| v * v)),
            },
        };
        assert_relative_eq!(obs.innovation(&Vector::from_vec(vec![2.0])).unwrap()[0], -3.0);
        assert!(matches!(esrf_analysis(&prior, &obs, None), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn requested_covariance_matches_kalman() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (e, obs) = random_instance(5, 9, 3, &mut rng);
        let (mean, x) = e.moments();
        let pf = &x * x.transpose();
        let upd = esrf_update(&mean, &x, &pf, &obs, true).unwrap();
        let h = obs.h.matrix().unwrap();
        let c = h * &pf * h.transpose() + &obs.r;
        let k = &pf * h.transpose() * c.try_inverse().unwrap();
        let expected = (Matrix::identity(5, 5) - k * h) * &pf;
        assert!(relative_frobenius(upd.covariance.as_ref().unwrap(), &expected) < 1e-8);
    }
}

//! Multi-model fusion.
//!
//! Model forecasts enter as pseudo-observations of the reference state
//! through their maps `G_m`. The direct (information-form) solution, its
//! iterative Kalman chain and the BLUE weights live here; the cycling
//! filters and forecasting are in [`cycle`] and [`forecast`].

pub mod cycle;
pub mod forecast;

pub use cycle::{
    advance_model, mm_enkf_step_method1, mm_enkf_step_method2, CycleDiagnostics, CycleStreams, DivergenceGuard, FusionMethod,
    MultiModelState,
};
pub use forecast::{mm_forecast, recursive_forecast, ForecastOutput};

use crate::filter::{forecast_covariance, Ensemble, Observation};
use crate::linalg::{solve_spd, symmetrize};
use crate::{Error, Matrix, Real, Result, Vector};

/// Condition bound for the pseudo-observation innovation covariance.
const MAX_FUSION_CONDITION: f64 = 1e12;

/// Mean and covariance of one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary<T: Real> {
    pub mean: Vector<T>,
    pub cov: Matrix<T>,
}

impl<T: Real> GaussianSummary<T> {
    pub fn new(mean: Vector<T>, cov: Matrix<T>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::invalid("summary mean and covariance disagree on dimension"));
        }
        Ok(GaussianSummary { mean, cov })
    }

    /// Ensemble mean and (optionally localized) sample covariance.
    pub fn from_ensemble(e: &Ensemble<T>, rho: Option<&Matrix<T>>) -> Result<Self> {
        Ok(GaussianSummary {
            mean: e.mean(),
            cov: forecast_covariance(e, rho)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn spd_inverse<T: Real>(a: &Matrix<T>, what: &str) -> Result<Matrix<T>> {
    symmetrize(a)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::invalid(format!("{what} is not positive definite; use the iterative solution")))
}

fn is_identity<T: Real>(g: &Matrix<T>) -> bool {
    g.is_square()
        && g.iter()
            .enumerate()
            .all(|(k, v)| *v == if k % (g.nrows() + 1) == 0 { T::one() } else { T::zero() })
}

fn check_map<T: Real>(s: &GaussianSummary<T>, g: &Matrix<T>, n: usize, which: usize) -> Result<()> {
    if g.shape() != (s.dim(), n) {
        return Err(Error::invalid(format!(
            "estimate {which}: map is {}x{}, expected {}x{n}",
            g.nrows(),
            g.ncols(),
            s.dim()
        )));
    }
    Ok(())
}

/// Precision-weighted fusion of model summaries and, optionally,
/// observations:
/// `P^a = (Σ G_mᵀ P_m⁻¹ G_m + Hᵀ R⁻¹ H)⁻¹`,
/// `x^a = P^a (Σ G_mᵀ P_m⁻¹ x_m + Hᵀ R⁻¹ y)`.
///
/// All covariances must be positive definite.
pub fn direct_fusion<T: Real>(
    summaries: &[(GaussianSummary<T>, Matrix<T>)],
    obs: Option<&Observation<T>>,
) -> Result<GaussianSummary<T>> {
    let (first, g0) = summaries.first().ok_or_else(|| Error::invalid("no estimates to fuse"))?;
    let n = g0.ncols();
    if summaries.len() == 1 && obs.is_none() && is_identity(g0) {
        return Ok(first.clone());
    }
    let mut info = Matrix::zeros(n, n);
    let mut shifted = Vector::zeros(n);
    for (m, (s, g)) in summaries.iter().enumerate() {
        check_map(s, g, n, m)?;
        let p_inv = spd_inverse(&s.cov, &format!("covariance of model {m}"))?;
        let gt_pinv = g.transpose() * p_inv;
        info += &gt_pinv * g;
        shifted += gt_pinv * &s.mean;
    }
    if let Some(obs) = obs {
        obs.validate()?;
        let h = obs
            .h
            .matrix()
            .ok_or_else(|| Error::invalid("direct fusion needs a linear observation operator"))?;
        if h.ncols() != n {
            return Err(Error::invalid("observation operator does not act on the reference space"));
        }
        let r_inv = spd_inverse(&obs.r, "observation covariance")?;
        let ht_rinv = h.transpose() * r_inv;
        info += &ht_rinv * h;
        shifted += ht_rinv * &obs.y;
    }
    let cov = spd_inverse(&info, "fused information matrix")?;
    let mean = &cov * shifted;
    Ok(GaussianSummary { mean, cov })
}

/// Minimum-variance unbiased weights
/// `A_ℓ = (Σ G_ℓ′ᵀ P_ℓ′⁻¹ G_ℓ′)⁻¹ G_ℓᵀ P_ℓ⁻¹`, which satisfy `Σ A_ℓ G_ℓ = I`.
pub fn blue_weights<T: Real>(covs: &[Matrix<T>], maps: &[Matrix<T>]) -> Result<Vec<Matrix<T>>> {
    if covs.is_empty() || covs.len() != maps.len() {
        return Err(Error::invalid("need one map per covariance and at least one estimate"));
    }
    let n = maps[0].ncols();
    let mut normal = Matrix::zeros(n, n);
    let mut parts = Vec::with_capacity(covs.len());
    for (l, (p, g)) in covs.iter().zip(maps).enumerate() {
        if g.ncols() != n || p.shape() != (g.nrows(), g.nrows()) {
            return Err(Error::invalid(format!("estimate {l}: covariance and map disagree")));
        }
        let gt_pinv = g.transpose() * spd_inverse(p, &format!("covariance {l}"))?;
        normal += &gt_pinv * g;
        parts.push(gt_pinv);
    }
    let normal_inv = symmetrize(&normal)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::invalid("normal matrix Σ GᵀP⁻¹G is singular"))?;
    Ok(parts.into_iter().map(|gp| &normal_inv * gp).collect())
}

/// Error covariance `Σ A_ℓ P_ℓ A_ℓᵀ` of a weighted combination of
/// independent unbiased estimates.
pub fn combination_error_covariance<T: Real>(weights: &[Matrix<T>], covs: &[Matrix<T>]) -> Result<Matrix<T>> {
    let first = weights.first().ok_or_else(|| Error::invalid("no weights"))?;
    let mut total = Matrix::zeros(first.nrows(), first.nrows());
    for (a, p) in weights.iter().zip(covs) {
        total += a * p * a.transpose();
    }
    Ok(symmetrize(&total))
}

/// Folds `rest` into `first` one at a time with `step`; failures are
/// annotated with the index carried by each item.
pub fn combine_iterative<S, P, F>(first: S, rest: impl IntoIterator<Item = (usize, P)>, mut step: F) -> Result<S>
where
    F: FnMut(S, P) -> Result<S>,
{
    rest.into_iter()
        .try_fold(first, |acc, (index, item)| step(acc, item).map_err(|e| e.in_model(index)))
}

/// Exact Kalman update of `prior` by an estimate `pseudo` of `G·x`:
/// `K = P Gᵀ (G P Gᵀ + P_m)⁻¹`, `x′ = x + K(x_m − G x)`, `P′ = (I − K G) P`.
pub fn kalman_summary_step<T: Real>(
    prior: GaussianSummary<T>,
    pseudo: &GaussianSummary<T>,
    g: &Matrix<T>,
) -> Result<GaussianSummary<T>> {
    check_map(pseudo, g, prior.dim(), 0)?;
    let pgt = &prior.cov * g.transpose();
    let c = symmetrize(&(g * &pgt + &pseudo.cov));
    let innovation = &pseudo.mean - g * &prior.mean;
    // K = (C⁻¹ G P)ᵀ since P and C are symmetric.
    let (sol, _) = solve_spd(&c, &pgt.transpose(), T::lit(MAX_FUSION_CONDITION), "pseudo-observation covariance")?;
    let k = sol.transpose();
    let mean = &prior.mean + &k * innovation;
    let cov = symmetrize(&(&prior.cov - &k * g * &prior.cov));
    Ok(GaussianSummary { mean, cov })
}

/// Iterative chain over summaries in `order`; the first entry seeds the
/// reference-space estimate through its information form.
pub fn fuse_summaries_iterative<T: Real>(
    summaries: &[(GaussianSummary<T>, Matrix<T>)],
    order: &[usize],
    obs: Option<&Observation<T>>,
) -> Result<GaussianSummary<T>> {
    let m = summaries.len();
    let mut seen = vec![false; m];
    if order.len() != m || order.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::invalid("order must be a permutation of the estimates"));
    }
    let (s0, g0) = &summaries[order[0]];
    let seed = if is_identity(g0) {
        s0.clone()
    } else {
        let p_inv = spd_inverse(&s0.cov, "seed covariance")?;
        let gt_pinv = g0.transpose() * p_inv;
        let cov = spd_inverse(&(&gt_pinv * g0), "seed information").map_err(|e| e.in_model(order[0]))?;
        let mean = &cov * (gt_pinv * &s0.mean);
        GaussianSummary { mean, cov }
    };
    let fused = combine_iterative(
        seed,
        order[1..].iter().map(|&i| (i, &summaries[i])),
        |acc, (s, g)| kalman_summary_step(acc, s, g),
    )?;
    match obs {
        None => Ok(fused),
        Some(obs) => {
            let h = obs
                .h
                .matrix()
                .ok_or_else(|| Error::invalid("summary update needs a linear observation operator"))?;
            let pseudo = GaussianSummary::new(obs.y.clone(), obs.r.clone())?;
            kalman_summary_step(fused, &pseudo, h)
        }
    }
}

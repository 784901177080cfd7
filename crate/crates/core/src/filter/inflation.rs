use super::{ensemble_moments, Ensemble};
use crate::{Error, Matrix, Real, Result, Vector};

/// Temporally smoothed multiplicative inflation factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InflationState<T> {
    /// Smoothed factor λ̃ applied to the next prior.
    pub lambda: T,
    /// Smoothing weight γ ∈ (0, 1).
    pub gamma: T,
}

impl<T: Real> InflationState<T> {
    pub fn new(lambda: T, gamma: T) -> Result<Self> {
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::invalid("inflation smoothing weight must lie in (0, 1)"));
        }
        if !(lambda > T::zero()) {
            return Err(Error::invalid("inflation factor must be positive"));
        }
        Ok(InflationState { lambda, gamma })
    }
}

/// Innovation-based estimate `λ̂ = (dᵀd − tr R) / tr(H·P·Hᵀ)`.
///
/// Negative values are legitimate single-sample estimates.
pub fn estimate_inflation_factor<T: Real>(d: &Vector<T>, r: &Matrix<T>, hpht: &Matrix<T>) -> Result<T> {
    let denom = hpht.trace();
    if !(denom > T::zero()) {
        return Err(Error::invalid("tr(HPHᵀ) must be positive to estimate inflation"));
    }
    Ok((d.dot(d) - r.trace()) / denom)
}

/// `λ̃′ = γ·λ̂ + (1 − γ)·λ̃`; a non-positive result means the error
/// covariances (or γ) are misspecified.
pub fn smooth_inflation<T: Real>(state: InflationState<T>, estimate: T) -> Result<InflationState<T>> {
    if !(state.gamma > T::zero() && state.gamma < T::one()) {
        return Err(Error::invalid("inflation smoothing weight must lie in (0, 1)"));
    }
    let lambda = state.gamma * estimate + (T::one() - state.gamma) * state.lambda;
    if !(lambda > T::zero()) {
        return Err(Error::Misspecification {
            lambda: lambda.to_f64_lossy(),
        });
    }
    Ok(InflationState { lambda, ..state })
}

/// Scales anomalies about the ensemble mean by `√λ`.
///
/// `λ = 1` returns the ensemble untouched (bit for bit).
pub fn apply_inflation<T: Real>(e: &Ensemble<T>, lambda: T) -> Result<Ensemble<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::invalid("inflation factor must be positive"));
    }
    if lambda == T::one() {
        return Ok(e.clone());
    }
    let (mean, x) = ensemble_moments(e);
    Ensemble::from_moments(&mean, &(x * lambda.sqrt()))
}

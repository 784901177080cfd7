//! Innovation-based estimation of the model-error covariance `Q`.
//!
//! From `E[d·dᵀ] = H·(P^p + Q)·Hᵀ + R` with the single-sample proxy `d·dᵀ`,
//! either solved in closed form (invertible `H`) or projected onto a fixed
//! basis by least squares, then smoothed in time and kept PSD.

use rand::Rng;

use crate::filter::{ensemble_moments, Ensemble};
use crate::linalg::{nearest_psd, symmetrize, SymEig};
use crate::rng::standard_normal_matrix;
use crate::{Error, Matrix, Real, Result, Vector};

/// `H` must be at least this well conditioned for the closed-form estimate.
pub const MAX_OBS_OPERATOR_CONDITION: f64 = 1e10;

/// Smoothed model-error statistics of one model at one lead time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelErrorState<T: Real> {
    /// `Q̃`, kept symmetric PSD.
    pub q: Matrix<T>,
    /// Bias `b`; draws are centred at `−b`.
    pub bias: Vector<T>,
    /// Smoothing weight `δ ∈ (0, 1)`.
    pub delta: T,
    /// PSD floor `ε`.
    pub eps: T,
    /// Structured basis `{Q_p}`; `None` selects the closed form.
    pub basis: Option<Vec<Matrix<T>>>,
}

impl<T: Real> ModelErrorState<T> {
    pub fn new(q: Matrix<T>, delta: T) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::invalid("Q must be square"));
        }
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::invalid("Q smoothing weight must lie in (0, 1)"));
        }
        let n = q.nrows();
        let q = nearest_psd(&q, T::zero())?;
        Ok(ModelErrorState {
            q,
            bias: Vector::zeros(n),
            delta,
            eps: T::zero(),
            basis: None,
        })
    }

    /// Isotropic initial guess `scale·I`.
    pub fn isotropic(n: usize, scale: T, delta: T) -> Result<Self> {
        Self::new(Matrix::identity(n, n) * scale, delta)
    }

    pub fn with_basis(mut self, basis: Vec<Matrix<T>>) -> Result<Self> {
        let n = self.dim();
        if basis.is_empty() {
            return Err(Error::invalid("Q basis is empty"));
        }
        if basis.iter().any(|b| b.shape() != (n, n)) {
            return Err(Error::invalid("Q basis matrices must match the model dimension"));
        }
        self.basis = Some(basis);
        Ok(self)
    }

    pub fn with_eps(mut self, eps: T) -> Result<Self> {
        if eps < T::zero() {
            return Err(Error::invalid("PSD floor must be non-negative"));
        }
        self.eps = eps;
        self.q = nearest_psd(&self.q, eps)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// A zero state (no perturbation).
    pub fn zero(n: usize) -> Self {
        ModelErrorState {
            q: Matrix::zeros(n, n),
            bias: Vector::zeros(n),
            delta: T::lit(0.5),
            eps: T::zero(),
            basis: None,
        }
    }

    /// Estimates `Q̂` from one innovation and folds it into `Q̃`.
    ///
    /// Returns whether the least-squares system was rank deficient.
    pub fn update(&mut self, d: &Vector<T>, r: &Matrix<T>, pp: &Matrix<T>, h: &Matrix<T>) -> Result<bool> {
        let (q_hat, deficient) = match &self.basis {
            Some(basis) => {
                let fit = estimate_q_least_squares(d, r, pp, h, basis)?;
                (fit.q, fit.rank_deficient)
            }
            None => (estimate_q_full_obs(d, r, pp, h)?, false),
        };
        *self = smooth_q(self, &q_hat)?;
        Ok(deficient)
    }
}

/// Diagonal basis `{e_i·e_iᵀ}`.
pub fn diagonal_basis<T: Real>(n: usize) -> Vec<Matrix<T>> {
    (0..n)
        .map(|i| {
            let mut m = Matrix::zeros(n, n);
            m[(i, i)] = T::one();
            m
        })
        .collect()
}

/// Innovation `d = y − H_m·x̄`.
pub fn innovation<T: Real>(y: &Vector<T>, h: &Matrix<T>, mean: &Vector<T>) -> Result<Vector<T>> {
    if h.shape() != (y.len(), mean.len()) {
        return Err(Error::invalid(format!(
            "H is {}x{} for {} observations of a {}-dimensional state",
            h.nrows(),
            h.ncols(),
            y.len(),
            mean.len()
        )));
    }
    Ok(y - h * mean)
}

/// Unbiased sample covariance of the unperturbed forecast ensemble.
pub fn predictability_covariance<T: Real>(e: &Ensemble<T>) -> Matrix<T> {
    let (_, x) = ensemble_moments(e);
    &x * x.transpose()
}

fn residual<T: Real>(d: &Vector<T>, r: &Matrix<T>, pp: &Matrix<T>, h: &Matrix<T>) -> Result<Matrix<T>> {
    let p = d.len();
    if r.shape() != (p, p) || h.nrows() != p || pp.shape() != (h.ncols(), h.ncols()) {
        return Err(Error::invalid("innovation, R, P^p and H disagree on dimensions"));
    }
    Ok(d * d.transpose() - r - h * pp * h.transpose())
}

/// Closed form `Q̂ = H⁻¹(d·dᵀ − R − H·P^p·Hᵀ)H⁻ᵀ` for square invertible `H`.
///
/// The result may be indefinite.
pub fn estimate_q_full_obs<T: Real>(d: &Vector<T>, r: &Matrix<T>, pp: &Matrix<T>, h: &Matrix<T>) -> Result<Matrix<T>> {
    if !h.is_square() {
        return Err(Error::invalid(
            "closed-form Q estimate needs a square H; use the least-squares estimate",
        ));
    }
    let c = residual(d, r, pp, h)?;
    if is_identity(h) {
        return Ok(symmetrize(&c));
    }
    let svd = h.clone().svd(true, true);
    let (lo, hi) = svd
        .singular_values
        .iter()
        .fold((T::lit(f64::MAX), T::zero()), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
    if !(lo > T::zero()) || hi / lo > T::lit(MAX_OBS_OPERATOR_CONDITION) {
        return Err(Error::invalid(
            "H is not invertible; use the least-squares Q estimate",
        ));
    }
    let h_inv = svd
        .pseudo_inverse(T::zero())
        .map_err(|e| Error::numerical("observation operator", e))?;
    Ok(symmetrize(&(&h_inv * c * h_inv.transpose())))
}

fn is_identity<T: Real>(h: &Matrix<T>) -> bool {
    h.is_square()
        && h.iter()
            .enumerate()
            .all(|(k, v)| *v == if k % (h.nrows() + 1) == 0 { T::one() } else { T::zero() })
}

/// Least-squares projection onto `span{Q_p}`.
#[derive(Debug, Clone)]
pub struct LeastSquaresQ<T: Real> {
    pub coefficients: Vector<T>,
    pub q: Matrix<T>,
    /// The normal matrix was singular and the minimum-norm solution was taken.
    pub rank_deficient: bool,
}

/// Minimizes `‖Σ q_p·H·Q_p·Hᵀ − C‖_F` with `C = d·dᵀ − R − H·P^p·Hᵀ`.
pub fn estimate_q_least_squares<T: Real>(
    d: &Vector<T>,
    r: &Matrix<T>,
    pp: &Matrix<T>,
    h: &Matrix<T>,
    basis: &[Matrix<T>],
) -> Result<LeastSquaresQ<T>> {
    if basis.is_empty() {
        return Err(Error::invalid("Q basis is empty"));
    }
    let n = h.ncols();
    if basis.iter().any(|b| b.shape() != (n, n)) {
        return Err(Error::invalid("Q basis matrices must match the model dimension"));
    }
    let c = residual(d, r, pp, h)?;
    let columns: Vec<Matrix<T>> = basis.iter().map(|q| h * q * h.transpose()).collect();
    if columns.iter().all(|a| a.iter().all(|v| *v == T::zero())) {
        return Err(Error::invalid("no basis matrix is visible through H"));
    }
    let k = basis.len();
    let frob = |a: &Matrix<T>, b: &Matrix<T>| a.component_mul(b).sum();
    let gram = Matrix::from_fn(k, k, |i, j| frob(&columns[i], &columns[j]));
    let rhs = Vector::from_fn(k, |i, _| frob(&columns[i], &c));
    let eig = SymEig::new(&gram);
    let rank_deficient = eig.rank() < k;
    let coefficients = eig.pinv() * rhs;
    let mut q = Matrix::zeros(n, n);
    for (coef, b) in coefficients.iter().zip(basis) {
        q += b * *coef;
    }
    Ok(LeastSquaresQ {
        coefficients,
        q: symmetrize(&q),
        rank_deficient,
    })
}

/// `Q̃′ = δ·Q̂ + (1 − δ)·Q̃`, repaired to eigenvalues ≥ `ε`.
pub fn smooth_q<T: Real>(state: &ModelErrorState<T>, q_hat: &Matrix<T>) -> Result<ModelErrorState<T>> {
    if !(state.delta > T::zero() && state.delta < T::one()) {
        return Err(Error::invalid("Q smoothing weight must lie in (0, 1)"));
    }
    if q_hat.shape() != state.q.shape() {
        return Err(Error::invalid("Q estimate does not match the state dimension"));
    }
    let blended = symmetrize(&(q_hat * state.delta + &state.q * (T::one() - state.delta)));
    // A successful Cholesky proves positive definiteness, skipping the
    // eigendecomposition in the common case.
    let q = if state.eps == T::zero() && blended.clone().cholesky().is_some() {
        blended
    } else {
        nearest_psd(&blended, state.eps)?
    };
    Ok(ModelErrorState { q, ..state.clone() })
}

/// Initial `Q̃` at lead `k·τ`: `k²·Q0`.
pub fn init_q_lead<T: Real>(q0: &Matrix<T>, k: usize) -> Matrix<T> {
    q0 * T::from_usize_lossy(k * k)
}

/// Adds an independent draw `η_i ∼ 𝒩(−b, Q̃)` to every member.
pub fn sample_model_error<T: Real, R: Rng + ?Sized>(
    e: &Ensemble<T>,
    state: &ModelErrorState<T>,
    rng: &mut R,
) -> Result<Ensemble<T>> {
    if state.dim() != e.dim() {
        return Err(Error::invalid(format!(
            "model-error state has dimension {}, ensemble has {}",
            state.dim(),
            e.dim()
        )));
    }
    let zero_q = state.q.iter().all(|v| *v == T::zero());
    let zero_b = state.bias.iter().all(|v| *v == T::zero());
    if zero_q && zero_b {
        return Ok(e.clone());
    }
    let mut members = e.members().clone();
    if !zero_q {
        let root = SymEig::new(&symmetrize(&state.q)).sqrt();
        let z = standard_normal_matrix::<T, R>(rng, e.dim(), e.size());
        members += root * z;
    }
    for mut col in members.column_iter_mut() {
        col -= &state.bias;
    }
    Ensemble::new(members)
}

/// Model error over a leg for dynamics perturbed by known noise: a draw
/// from `𝒩(0, Q)` using a precomputed square root.
pub fn sample_with_root<T: Real, R: Rng + ?Sized>(e: &Ensemble<T>, root: &Matrix<T>, rng: &mut R) -> Result<Ensemble<T>> {
    if root.shape() != (e.dim(), e.dim()) {
        return Err(Error::invalid("noise square root does not match the ensemble dimension"));
    }
    let z = standard_normal_matrix::<T, R>(rng, e.dim(), e.size());
    Ensemble::new(e.members() + root * z)
}

/// Congruence `A·Q·Aᵀ`, mapping a covariance into another space.
pub fn transport_q<T: Real>(q: &Matrix<T>, map: &Matrix<T>) -> Matrix<T> {
    symmetrize(&(map * q * map.transpose()))
}

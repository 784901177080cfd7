//! Single-model ensemble analysis: ensembles, observations, the
//! left-multiplied square-root update and multiplicative inflation.

mod esrf;
mod inflation;

pub use esrf::{esrf_analysis, esrf_update, SquareRootUpdate, MAX_INNOVATION_CONDITION};
pub use inflation::{apply_inflation, estimate_inflation_factor, smooth_inflation, InflationState};

use std::fmt;
use std::sync::Arc;

use crate::linalg::pseudoinverse;
use crate::{Error, Matrix, Real, Result, Vector};

/// Monte Carlo sample of a state distribution: one state per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T: Real> {
    members: Matrix<T>,
}

impl<T: Real> Ensemble<T> {
    pub fn new(members: Matrix<T>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::invalid(format!(
                "an ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        if members.nrows() == 0 {
            return Err(Error::invalid("ensemble state dimension is zero"));
        }
        if members.iter().any(|v| !v.finite()) {
            return Err(Error::invalid("ensemble has non-finite entries"));
        }
        Ok(Ensemble { members })
    }

    /// Builds `x̄·1ᵀ + (N−1)^{1/2}·X` from a mean and normalized anomalies.
    pub fn from_moments(mean: &Vector<T>, anomalies: &Matrix<T>) -> Result<Self> {
        if mean.len() != anomalies.nrows() {
            return Err(Error::invalid("mean and anomalies disagree on dimension"));
        }
        let n = anomalies.ncols();
        let scale = T::from_usize_lossy(n.saturating_sub(1)).sqrt();
        let mut members = anomalies * scale;
        for mut col in members.column_iter_mut() {
            col += mean;
        }
        Ensemble::new(members)
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &Matrix<T> {
        &self.members
    }

    pub fn into_members(self) -> Matrix<T> {
        self.members
    }

    pub fn member(&self, i: usize) -> Vector<T> {
        self.members.column(i).into_owned()
    }

    pub fn mean(&self) -> Vector<T> {
        self.members.column_mean()
    }

    /// Mean and normalized anomalies `X = (N−1)^{−1/2}(E − x̄·1ᵀ)`.
    pub fn moments(&self) -> (Vector<T>, Matrix<T>) {
        ensemble_moments(self)
    }

    /// Applies a linear map to every member.
    pub fn mapped(&self, map: &Matrix<T>) -> Result<Self> {
        if map.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "map with {} columns applied to {}-dimensional ensemble",
                map.ncols(),
                self.dim()
            )));
        }
        Ensemble::new(map * &self.members)
    }

    /// Ensemble made of the given member columns.
    pub fn select(&self, columns: &[usize]) -> Result<Self> {
        Ensemble::new(self.members.select_columns(columns))
    }

    /// Concatenates same-dimension ensembles column-wise.
    pub fn concat(parts: &[Ensemble<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let n = first.dim();
        if parts.iter().any(|p| p.dim() != n) {
            return Err(Error::invalid("concatenated ensembles differ in dimension"));
        }
        let total: usize = parts.iter().map(Ensemble::size).sum();
        let mut members = Matrix::zeros(n, total);
        let mut at = 0;
        for p in parts {
            members.columns_mut(at, p.size()).copy_from(&p.members);
            at += p.size();
        }
        Ensemble::new(members)
    }

    /// Rows `start..start + len` of every member.
    pub fn rows(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.dim() {
            return Err(Error::invalid("row range outside ensemble"));
        }
        Ensemble::new(self.members.rows(start, len).into_owned())
    }
}

/// Mean and normalized anomalies of an ensemble; `X·Xᵀ` is the unbiased
/// sample covariance.
pub fn ensemble_moments<T: Real>(e: &Ensemble<T>) -> (Vector<T>, Matrix<T>) {
    let mean = e.mean();
    let scale = T::one() / T::from_usize_lossy(e.size() - 1).sqrt();
    let mut x = e.members.clone();
    for mut col in x.column_iter_mut() {
        col -= &mean;
        col *= scale;
    }
    (mean, x)
}

/// Localized sample covariance `ρ ∘ (X·Xᵀ)`.
pub fn forecast_covariance<T: Real>(e: &Ensemble<T>, rho: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    let (_, x) = ensemble_moments(e);
    covariance_from_anomalies(&x, rho)
}

pub(crate) fn covariance_from_anomalies<T: Real>(x: &Matrix<T>, rho: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    let mut p = x * x.transpose();
    if let Some(rho) = rho {
        if rho.shape() != p.shape() {
            return Err(Error::invalid(format!(
                "localization is {}x{} but the state has dimension {}",
                rho.nrows(),
                rho.ncols(),
                p.nrows()
            )));
        }
        p.component_mul_assign(rho);
    }
    Ok(p)
}

/// Observation operator: a matrix, or a general function for the
/// mean/innovation path only.
#[derive(Clone)]
pub enum ObservationOperator<T: Real> {
    Linear(Matrix<T>),
    Function {
        input_dim: usize,
        output_dim: usize,
        apply: Arc<dyn Fn(&Vector<T>) -> Vector<T> + Send + Sync>,
    },
}

impl<T: Real> fmt::Debug for ObservationOperator<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservationOperator::Linear(m) => f.debug_tuple("Linear").field(&m.shape()).finish(),
            ObservationOperator::Function {
                input_dim,
                output_dim,
                ..
            } => write!(f, "Function({input_dim} -> {output_dim})"),
        }
    }
}

impl<T: Real> ObservationOperator<T> {
    pub fn input_dim(&self) -> usize {
        match self {
            ObservationOperator::Linear(m) => m.ncols(),
            ObservationOperator::Function { input_dim, .. } => *input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            ObservationOperator::Linear(m) => m.nrows(),
            ObservationOperator::Function { output_dim, .. } => *output_dim,
        }
    }

    pub fn apply(&self, x: &Vector<T>) -> Vector<T> {
        match self {
            ObservationOperator::Linear(m) => m * x,
            ObservationOperator::Function { apply, .. } => apply(x),
        }
    }

    pub fn matrix(&self) -> Option<&Matrix<T>> {
        match self {
            ObservationOperator::Linear(m) => Some(m),
            ObservationOperator::Function { .. } => None,
        }
    }
}

/// Observation vector `y` with error covariance `R` and operator `H`.
#[derive(Debug, Clone)]
pub struct Observation<T: Real> {
    pub y: Vector<T>,
    pub r: Matrix<T>,
    pub h: ObservationOperator<T>,
}

impl<T: Real> Observation<T> {
    pub fn linear(y: Vector<T>, r: Matrix<T>, h: Matrix<T>) -> Result<Self> {
        let obs = Observation {
            y,
            r,
            h: ObservationOperator::Linear(h),
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.y.len();
        if self.r.shape() != (p, p) {
            return Err(Error::invalid(format!(
                "R is {}x{} for {p} observations",
                self.r.nrows(),
                self.r.ncols()
            )));
        }
        if self.h.output_dim() != p {
            return Err(Error::invalid(format!(
                "H produces {} values for {p} observations",
                self.h.output_dim()
            )));
        }
        if self.y.iter().any(|v| !v.finite()) {
            return Err(Error::invalid("observation vector has non-finite entries"));
        }
        Ok(())
    }

    /// Innovation `y − H·x`.
    pub fn innovation(&self, x: &Vector<T>) -> Result<Vector<T>> {
        if x.len() != self.h.input_dim() {
            return Err(Error::invalid(format!(
                "H expects {}-dimensional states, got {}",
                self.h.input_dim(),
                x.len()
            )));
        }
        Ok(&self.y - self.h.apply(x))
    }
}

/// Observation operator of a model that lives in its own space:
/// `H_m = H·G_m†`, where `G_m` maps the reference space into model space.
pub fn compute_model_obs_operator<T: Real>(g: &Matrix<T>, h: &Matrix<T>) -> Result<Matrix<T>> {
    if g.ncols() != h.ncols() {
        return Err(Error::invalid(format!(
            "G has {} columns but H expects {}-dimensional reference states",
            g.ncols(),
            h.ncols()
        )));
    }
    Ok(h * pseudoinverse(g))
}

//! Dense covariance utilities.
//!
//! Every square root, pseudoinverse and PSD repair goes through one symmetric
//! eigendecomposition ([`SymEig`]) so they share a single tolerance policy.

pub mod localization;

pub use localization::{build_localization, cyclic_distance, gaspari_cohn};

use nalgebra::SymmetricEigen;

use crate::{Error, Matrix, Real, Result, Vector};

/// Relative Frobenius asymmetry accepted before a matrix is rejected.
pub fn symmetry_tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::lit(1e3) * T::eps())
}

/// Relative eigenvalue cut-off below which a direction is treated as null.
pub fn rank_tolerance<T: Real>(n: usize) -> T {
    T::from_usize_lossy(n.max(1)) * T::lit(16.0) * T::eps()
}

/// `‖a − b‖_F / ‖b‖_F`, falling back to the absolute norm when `b` is zero.
pub fn relative_frobenius<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> T {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > T::zero() {
        diff / scale
    } else {
        diff
    }
}

pub fn symmetrize<T: Real>(a: &Matrix<T>) -> Matrix<T> {
    (a + a.transpose()) * T::lit(0.5)
}

/// Symmetrizes `a` after checking it is square and symmetric within tolerance.
pub fn checked_symmetric<T: Real>(a: &Matrix<T>, what: &str) -> Result<Matrix<T>> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.finite()) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    let asym = (a - a.transpose()).norm();
    let scale = a.norm();
    if asym > symmetry_tolerance::<T>() * scale.max(T::eps()) && asym > T::zero() {
        return Err(Error::invalid(format!(
            "{what} is not symmetric (relative asymmetry {})",
            asym / scale
        )));
    }
    Ok(symmetrize(a))
}

/// Eigendecomposition of a symmetric matrix, `A = V·diag(λ)·Vᵀ`.
#[derive(Debug, Clone)]
pub struct SymEig<T: Real> {
    pub values: Vector<T>,
    pub vectors: Matrix<T>,
}

impl<T: Real> SymEig<T> {
    /// Decomposes the symmetric part of `a`. No symmetry check.
    pub fn new(a: &Matrix<T>) -> Self {
        let eig = SymmetricEigen::new(symmetrize(a));
        SymEig {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::zero(), |m, v| m.max(v))
    }

    pub fn min_value(&self) -> T {
        self.values
            .iter()
            .copied()
            .fold(T::max_value().unwrap_or(T::lit(f64::MAX)), |m, v| m.min(v))
    }

    /// `V·diag(f(λ))·Vᵀ`.
    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        let out = scaled * self.vectors.transpose();
        symmetrize(&out)
    }

    /// Square root with eigenvalues clamped at zero.
    pub fn sqrt(&self) -> Matrix<T> {
        self.map(|l| l.max(T::zero()).sqrt())
    }

    /// Moore–Penrose pseudoinverse of the square root.
    pub fn sqrt_pinv(&self) -> Matrix<T> {
        let cut = self.cutoff();
        self.map(|l| if l > cut { T::one() / l.sqrt() } else { T::zero() })
    }

    /// Moore–Penrose pseudoinverse of the decomposed matrix.
    pub fn pinv(&self) -> Matrix<T> {
        let cut = self.cutoff();
        self.map(|l| if l.abs() > cut { T::one() / l } else { T::zero() })
    }

    /// Number of eigenvalues above the rank cut-off.
    pub fn rank(&self) -> usize {
        let cut = self.cutoff();
        self.values.iter().filter(|l| l.abs() > cut).count()
    }

    fn cutoff(&self) -> T {
        let scale = self
            .values
            .iter()
            .copied()
            .fold(T::zero(), |m, v| m.max(v.abs()));
        scale * rank_tolerance::<T>(self.values.len())
    }
}

/// Symmetric square root `S` with `S·S = A`.
///
/// Negative eigenvalues (round-off in PSD inputs) are clamped to zero.
pub fn symmetric_sqrt<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let a = checked_symmetric(a, "covariance")?;
    Ok(SymEig::new(&a).sqrt())
}

/// Moore–Penrose pseudoinverse of an arbitrary real matrix.
///
/// Computed from the eigendecomposition of the smaller Gram matrix:
/// `A† = (AᵀA)†Aᵀ` or `Aᵀ(AAᵀ)†`.
pub fn pseudoinverse<T: Real>(a: &Matrix<T>) -> Matrix<T> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Matrix::zeros(cols, rows);
    }
    if a.iter().all(|v| *v == T::zero()) {
        return Matrix::zeros(cols, rows);
    }
    let at = a.transpose();
    if cols <= rows {
        let gram = &at * a;
        SymEig::new(&gram).pinv() * at
    } else {
        let gram = a * &at;
        at * SymEig::new(&gram).pinv()
    }
}

/// Nearest (Frobenius) symmetric matrix whose eigenvalues are all ≥ `eps`.
///
/// Inputs already satisfying the floor come back as their symmetric part,
/// so the operation is idempotent.
pub fn nearest_psd<T: Real>(a: &Matrix<T>, eps: T) -> Result<Matrix<T>> {
    if !a.is_square() {
        return Err(Error::invalid("nearest_psd needs a square matrix"));
    }
    if eps < T::zero() {
        return Err(Error::invalid("PSD floor must be non-negative"));
    }
    let sym = symmetrize(a);
    let eig = SymEig::new(&sym);
    if eig.min_value() >= eps {
        return Ok(sym);
    }
    Ok(eig.map(|l| l.max(eps)))
}

/// Solves `C·X = B` for symmetric PSD `C`.
///
/// Uses Cholesky when the factor's diagonal suggests a condition number below
/// `max_condition`, and an eigendecomposition pseudo-solve otherwise. Returns
/// the solution and whether the pseudo-solve was used.
pub fn solve_spd<T: Real>(
    c: &Matrix<T>,
    b: &Matrix<T>,
    max_condition: T,
    what: &str,
) -> Result<(Matrix<T>, bool)> {
    if c.iter().any(|v| !v.finite()) {
        return Err(Error::numerical(what, "non-finite entries"));
    }
    if let Some(chol) = c.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((T::max_value().unwrap_or(T::lit(f64::MAX)), T::zero()), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        if lo > T::zero() && (hi / lo) * (hi / lo) <= max_condition {
            return Ok((chol.solve(b), false));
        }
    }
    let eig = SymEig::new(c);
    let top = eig.max_value();
    if !(top > T::zero()) {
        return Err(Error::numerical(what, "matrix is zero or negative definite"));
    }
    let cut = top / max_condition;
    let inv = eig.map(|l| if l > cut { T::one() / l } else { T::zero() });
    Ok((inv * b, true))
}

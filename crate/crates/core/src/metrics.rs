//! Verification scores.

use crate::{Ensemble, Error, Real, Result, Vector};

/// Root-mean-square difference over dimensions.
pub fn rmse<T: Real>(mean: &Vector<T>, truth: &Vector<T>) -> Result<T> {
    if mean.len() != truth.len() || mean.is_empty() {
        return Err(Error::invalid(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            mean.len(),
            truth.len()
        )));
    }
    let n = T::from_usize_lossy(mean.len());
    Ok(((mean - truth).norm_squared() / n).sqrt())
}

/// CRPS of the empirical distribution of `samples` against `truth`:
/// `mean|X − y| − ½·mean|X − X′|` with the `1/N²` pair average.
///
/// The pair sum is evaluated in `O(N log N)` after sorting.
pub fn crps_univariate<T: Real>(samples: &[T], truth: T) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::invalid("CRPS needs at least one sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let nf = T::from_usize_lossy(n);
    let mut abs_err = T::zero();
    // Σ_{i<j} (x_j − x_i) = Σ_k x_k·(2k − n + 1) for ascending x.
    let mut spread = T::zero();
    for (k, &x) in sorted.iter().enumerate() {
        abs_err += (x - truth).abs();
        spread += x * (T::from_usize_lossy(2 * k + 1) - nf);
    }
    // ½·(2·Σ_{i<j})/N² = Σ_{i<j}/N².
    Ok(abs_err / nf - spread / (nf * nf))
}

/// Mean over dimensions of the univariate CRPS.
pub fn crps_mean<T: Real>(e: &Ensemble<T>, truth: &Vector<T>) -> Result<T> {
    if e.dim() != truth.len() {
        return Err(Error::invalid(format!(
            "ensemble has dimension {}, truth has {}",
            e.dim(),
            truth.len()
        )));
    }
    let members = e.members();
    let mut total = T::zero();
    let mut row = Vec::with_capacity(e.size());
    for i in 0..e.dim() {
        row.clear();
        row.extend(members.row(i).iter().copied());
        total += crps_univariate(&row, truth[i])?;
    }
    Ok(total / T::from_usize_lossy(e.dim()))
}

/// RMSE and CRPS restricted to rows `start..start + len`.
pub fn scores_on_rows<T: Real>(e: &Ensemble<T>, truth: &Vector<T>, start: usize, len: usize) -> Result<(T, T)> {
    if start + len > e.dim() || truth.len() != e.dim() {
        return Err(Error::invalid("score rows out of range"));
    }
    let sub = e.rows(start, len)?;
    let t = truth.rows(start, len).into_owned();
    Ok((rmse(&sub.mean(), &t)?, crps_mean(&sub, &t)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;
    use approx::assert_relative_eq;

    #[test]
    fn rmse_examples() {
        let t = Vector::from_vec(vec![0.0, 0.0]);
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let m = Vector::from_vec(vec![3.0, 4.0]);
        assert_relative_eq!(rmse(&m, &t).unwrap(), 12.5f64.sqrt());
        let swapped = Vector::from_vec(vec![4.0, 3.0]);
        assert_eq!(rmse(&m, &t).unwrap(), rmse(&swapped, &t).unwrap());
        assert!(rmse(&m, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps_univariate(&[1.5], 1.5).unwrap(), 0.0);
        assert_eq!(crps_univariate(&[1.0], 3.5).unwrap(), 2.5);
        assert_relative_eq!(crps_univariate(&[0.0, 1.0], 0.0).unwrap(), 0.25, epsilon = 1e-15);
        assert!(crps_univariate::<f64>(&[], 0.0).is_err());
    }

    #[test]
    fn crps_matches_naive_pair_formula() {
        let xs: [f64; 6] = [0.3, -1.2, 2.5, 0.3, 0.9, -0.4];
        let y = 0.7f64;
        let n = xs.len() as f64;
        let a: f64 = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
        let b: f64 = xs
            .iter()
            .flat_map(|x| xs.iter().map(move |z| (x - z).abs()))
            .sum::<f64>()
            / (n * n);
        assert_relative_eq!(crps_univariate(&xs, y).unwrap(), a - 0.5 * b, epsilon = 1e-14);
    }

    #[test]
    fn crps_mean_examples() {
        let e = Ensemble::new(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 5.0, 5.0])).unwrap();
        let t = Vector::from_vec(vec![0.0, 5.0]);
        assert_relative_eq!(crps_mean(&e, &t).unwrap(), 0.125, epsilon = 1e-15);
        let same = Ensemble::new(Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0])).unwrap();
        assert_relative_eq!(crps_mean(&same, &Vector::zeros(2)).unwrap(), 0.25, epsilon = 1e-15);
        assert!(crps_mean(&e, &Vector::zeros(3)).is_err());
    }
}

//! Randomized equivalence and property checks with independent reference
//! computations. Each check reports its worst deviation against a fixed
//! tolerance.

use std::time::Instant;

use mmkf_core::filter::esrf_update;
use mmkf_core::linalg::symmetric_sqrt;
use mmkf_core::metrics::crps_univariate;
use mmkf_core::model_error::estimate_q_full_obs;
use mmkf_core::multimodel::{
    blue_weights, combination_error_covariance, direct_fusion, fuse_summaries_iterative, GaussianSummary,
};
use mmkf_core::rng::{standard_normal_matrix, stream, Purpose};
use mmkf_core::{Ensemble, Matrix64, ModelErrorState, Observation, Vector64};
use rand::Rng;

/// Outcome of one oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: &'static str,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
    pub detail: String,
}

impl std::fmt::Display for OracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {:.3e} (tolerance {:.1e}, {:.2}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

fn normal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix64 {
    standard_normal_matrix::<f64, R>(rng, rows, cols)
}

fn vector<R: Rng>(rng: &mut R, n: usize) -> Vector64 {
    normal(rng, n, 1).column(0).into_owned()
}

fn spd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Matrix64 {
    let a = normal(rng, n, n);
    &a * a.transpose() / n as f64 + Matrix64::identity(n, n) * floor
}

fn rel(a: &Matrix64, b: &Matrix64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn rel_v(a: &Vector64, b: &Vector64) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Textbook inverse-based Kalman update of a summary by `(x_m, P_m, G)`.
fn reference_step(mean: &Vector64, cov: &Matrix64, pseudo: &GaussianSummary<f64>, g: &Matrix64) -> (Vector64, Matrix64) {
    let s = g * cov * g.transpose() + &pseudo.cov;
    let k = cov * g.transpose() * s.try_inverse().expect("invertible innovation covariance");
    let n = cov.nrows();
    let mean = mean + &k * (&pseudo.mean - g * mean);
    let cov = (Matrix64::identity(n, n) - &k * g) * cov;
    (mean, (&cov + cov.transpose()) * 0.5)
}

/// Random fusion instance: `m` estimates of an `n`-state, maps alternating
/// between the identity and a well-conditioned square matrix.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, m: usize) -> Vec<(GaussianSummary<f64>, Matrix64)> {
    (0..m)
        .map(|i| {
            let g = if i % 2 == 0 {
                Matrix64::identity(n, n)
            } else {
                Matrix64::identity(n, n) + normal(rng, n, n) * (0.3 / (n as f64).sqrt())
            };
            let s = GaussianSummary::new(vector(rng, n), spd(rng, n, 0.2)).expect("valid summary");
            (s, g)
        })
        .collect()
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m <= 1 {
        return vec![(0..m).collect()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..m {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

fn report(name: &'static str, value: f64, tolerance: f64, passed: bool, start: Instant, detail: String) -> OracleReport {
    OracleReport {
        name,
        value,
        tolerance,
        passed,
        seconds: start.elapsed().as_secs_f64(),
        detail,
    }
}

/// Direct precision-weighted fusion against a chain of textbook Kalman
/// steps on `instances` random problems with `n ≤ 8`, `M ≤ 4`.
pub fn direct_vs_iterative(seed: u64, instances: usize) -> OracleReport {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = stream(seed, Purpose::Oracle, 1, i as u64);
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=4);
        let s = random_instance(&mut rng, n, m);
        let direct = direct_fusion(&s, None).expect("direct fusion");
        let (mut mean, mut cov) = (s[0].0.mean.clone(), s[0].0.cov.clone());
        for (pseudo, g) in &s[1..] {
            (mean, cov) = reference_step(&mean, &cov, pseudo, g);
        }
        worst = worst.max(rel_v(&mean, &direct.mean)).max(rel(&cov, &direct.cov));
        let lib = fuse_summaries_iterative(&s, &(0..m).collect::<Vec<_>>(), None).expect("iterative fusion");
        worst = worst.max(rel_v(&lib.mean, &direct.mean)).max(rel(&lib.cov, &direct.cov));
    }
    report("direct vs iterative", worst, 1e-8, worst < 1e-8, start, format!("{instances} instances"))
}

/// Every fusion order of the same instances gives the same estimate.
pub fn order_independence(seed: u64, instances: usize) -> OracleReport {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut orders = 0;
    for i in 0..instances {
        let mut rng = stream(seed, Purpose::Oracle, 1, i as u64);
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=4);
        let s = random_instance(&mut rng, n, m);
        let fused: Vec<GaussianSummary<f64>> = permutations(m)
            .iter()
            .map(|o| fuse_summaries_iterative(&s, o, None).expect("iterative fusion"))
            .collect();
        orders += fused.len();
        for a in &fused {
            for b in &fused {
                worst = worst.max(rel_v(&a.mean, &b.mean)).max(rel(&a.cov, &b.cov));
            }
        }
    }
    report(
        "order independence",
        worst,
        1e-8,
        worst < 1e-8,
        start,
        format!("{instances} instances, {orders} orderings"),
    )
}

/// BLUE weights beat constraint-respecting perturbations, and direct fusion
/// with observations equals the BLUE over `M + 1` estimates.
pub fn blue_optimality(seed: u64, instances: usize, perturbations: usize) -> OracleReport {
    let start = Instant::now();
    let mut min_margin = f64::INFINITY;
    let mut worst_equivalence: f64 = 0.0;
    for i in 0..instances {
        let mut rng = stream(seed, Purpose::Oracle, 3, i as u64);
        let n = rng.random_range(1..=6);
        let m = rng.random_range(2..=4);
        let s = random_instance(&mut rng, n, m);
        let covs: Vec<Matrix64> = s.iter().map(|(x, _)| x.cov.clone()).collect();
        let maps: Vec<Matrix64> = s.iter().map(|(_, g)| g.clone()).collect();
        let w = blue_weights(&covs, &maps).expect("BLUE weights");
        let best = combination_error_covariance(&w, &covs).expect("error covariance").trace();
        for _ in 0..perturbations {
            // Σ E_ℓ G_ℓ = 0 with G_0 = I.
            let mut e: Vec<Matrix64> = (0..m).map(|_| normal(&mut rng, n, n) * 0.05).collect();
            let tail = (1..m).fold(Matrix64::zeros(n, n), |acc, l| acc + &e[l] * &maps[l]);
            e[0] = -tail;
            let other: Vec<Matrix64> = w.iter().zip(&e).map(|(a, d)| a + d).collect();
            let trace = combination_error_covariance(&other, &covs).expect("error covariance").trace();
            min_margin = min_margin.min(trace - best);
        }
        let p = rng.random_range(1..=6);
        let h = normal(&mut rng, p, n);
        let r = spd(&mut rng, p, 0.3);
        let obs = Observation::linear(vector(&mut rng, p), r.clone(), h.clone()).expect("observation");
        let direct = direct_fusion(&s, Some(&obs)).expect("direct fusion");
        let mut all_covs = covs.clone();
        all_covs.push(r);
        let mut all_maps = maps.clone();
        all_maps.push(h);
        let weights = blue_weights(&all_covs, &all_maps).expect("BLUE weights");
        let mut estimate = &weights[m] * &obs.y;
        for (a, (x, _)) in weights.iter().zip(&s) {
            estimate += a * &x.mean;
        }
        let cov = combination_error_covariance(&weights, &all_covs).expect("error covariance");
        worst_equivalence = worst_equivalence.max(rel_v(&estimate, &direct.mean)).max(rel(&cov, &direct.cov));
    }
    let passed = min_margin > 0.0 && worst_equivalence < 1e-10;
    report(
        "BLUE optimality",
        worst_equivalence,
        1e-10,
        passed,
        start,
        format!("min trace margin {min_margin:.3e} over {instances}×{perturbations} perturbations"),
    )
}

/// Square-root analysis covariance against `(I − KH)·P`.
pub fn esrf_exactness(seed: u64, instances: usize) -> OracleReport {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = stream(seed, Purpose::Oracle, 4, i as u64);
        let n = rng.random_range(1..=10);
        let members = n + rng.random_range(1..=10);
        let p = rng.random_range(1..=10);
        let e = Ensemble::new(normal(&mut rng, n, members)).expect("ensemble");
        let h = normal(&mut rng, p, n);
        let r = spd(&mut rng, p, 0.2);
        let obs = Observation::linear(vector(&mut rng, p), r.clone(), h.clone()).expect("observation");
        let (mean, x) = e.moments();
        let pf = &x * x.transpose();
        let out = esrf_update(&mean, &x, &pf, &obs, false).expect("square-root update");
        let k = &pf * h.transpose() * (&h * &pf * h.transpose() + r).try_inverse().expect("invertible");
        let pa = (Matrix64::identity(n, n) - &k * &h) * &pf;
        worst = worst.max(rel(&(&out.anomalies * out.anomalies.transpose()), &pa));
    }
    report("ESRF exactness", worst, 1e-6, worst < 1e-6, start, format!("{instances} instances"))
}

/// Adaptive Kalman filter on `x ← A·x + η`, returning the final `Q̃`.
fn adaptive_q(a: &Matrix64, q: &Matrix64, r: &Matrix64, cycles: usize, seed: u64) -> Matrix64 {
    let n = a.nrows();
    let mut rng = stream(seed, Purpose::Oracle, 5, n as u64);
    let q_root = symmetric_sqrt(q).expect("root");
    let r_root = symmetric_sqrt(r).expect("root");
    let h = Matrix64::identity(n, n);
    let mut state = ModelErrorState::isotropic(n, 0.1, 1e-3).expect("state");
    let mut truth = vector(&mut rng, n);
    let mut mean = truth.clone();
    let mut p = Matrix64::identity(n, n);
    for _ in 0..cycles {
        truth = a * &truth + &q_root * vector(&mut rng, n);
        let y = &truth + &r_root * vector(&mut rng, n);
        let pp = a * &p * a.transpose();
        let pf = &pp + &state.q;
        mean = a * &mean;
        let d = &y - &mean;
        state.update(&d, r, &pp, &h).expect("Q update");
        let k = &pf * (&pf + r).try_inverse().expect("invertible");
        mean += &k * d;
        p = (Matrix64::identity(n, n) - &k) * &pf;
        p = (&p + p.transpose()) * 0.5;
    }
    state.q
}

/// Convergence of the smoothed `Q̃` in known-`Q` scalar and 3-variable
/// systems, and the innovation expectation identity over many draws.
pub fn q_estimation(seed: u64, cycles: usize, draws: usize) -> OracleReport {
    let start = Instant::now();
    let scalar = adaptive_q(
        &Matrix64::from_element(1, 1, 0.9),
        &Matrix64::from_element(1, 1, 1.0),
        &Matrix64::from_element(1, 1, 0.5),
        cycles,
        seed,
    );
    let scalar_err = (scalar[(0, 0)] - 1.0).abs();
    let a3 = Matrix64::from_row_slice(3, 3, &[0.8, 0.1, 0.0, -0.1, 0.7, 0.2, 0.0, 0.1, 0.9]);
    let q3 = Matrix64::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.8, 0.2, 0.0, 0.2, 0.6]);
    let three = adaptive_q(&a3, &q3, &(Matrix64::identity(3, 3) * 0.4), cycles, seed);
    let three_err = rel(&three, &q3);

    // d = H(A·e + η) + ν with e ~ N(0, Pᵃ).
    let mut rng = stream(seed, Purpose::Oracle, 6, 0);
    let n = 3;
    let h = Matrix64::identity(n, n) + normal(&mut rng, n, n) * 0.2;
    let pa = spd(&mut rng, n, 0.1) * 0.3;
    let r = Matrix64::identity(n, n) * 0.2;
    let pp = &a3 * &pa * a3.transpose();
    let (pa_root, q_root, r_root) = (
        symmetric_sqrt(&pa).expect("root"),
        symmetric_sqrt(&q3).expect("root"),
        symmetric_sqrt(&r).expect("root"),
    );
    let mut total = Matrix64::zeros(n, n);
    for _ in 0..draws {
        let err = &a3 * &pa_root * vector(&mut rng, n) + &q_root * vector(&mut rng, n);
        let d = &h * err + &r_root * vector(&mut rng, n);
        total += estimate_q_full_obs(&d, &r, &pp, &h).expect("closed form");
    }
    let identity_err = rel(&(total / draws as f64), &q3);
    let worst_convergence = scalar_err.max(three_err);
    report(
        "Q estimation",
        worst_convergence,
        0.3,
        worst_convergence < 0.3 && identity_err < 0.03,
        start,
        format!(
            "scalar {scalar_err:.3}, 3-dim {three_err:.3} after {cycles} cycles; expectation identity {identity_err:.4} over {draws} draws (tolerance 0.03)"
        ),
    )
}

/// `∫ (F(x) − 1{x ≥ y})² dx` of the empirical CDF by the composite
/// midpoint rule with `cells` cells on each interval between breakpoints,
/// counting `F` directly at every node.
pub fn crps_numeric(xs: &[f64], y: f64, cells: usize) -> f64 {
    let mut knots: Vec<f64> = xs.to_vec();
    knots.push(y);
    knots.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = xs.len() as f64;
    let mut total = 0.0;
    for w in knots.windows(2) {
        let width = (w[1] - w[0]) / cells as f64;
        for k in 0..cells {
            let t = w[0] + (k as f64 + 0.5) * width;
            let f = xs.iter().filter(|&&x| x <= t).count() as f64 / n;
            let step = if t >= y { 1.0 } else { 0.0 };
            total += (f - step).powi(2) * width;
        }
    }
    total
}

/// Pair-formula CRPS against numerical integration, and a Monte Carlo
/// propriety check: an ensemble from the verifying distribution scores
/// better than a biased, over-dispersed one.
pub fn crps_correctness(seed: u64, instances: usize, trials: usize) -> OracleReport {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = stream(seed, Purpose::Oracle, 7, i as u64);
        let size = rng.random_range(1..=30);
        let xs: Vec<f64> = (0..size).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = rng.random_range(-4.0..4.0);
        let exact = crps_univariate(&xs, y).expect("crps");
        let numeric = crps_numeric(&xs, y, 8);
        worst = worst.max((exact - numeric).abs());
    }
    let mut rng = stream(seed, Purpose::Oracle, 8, 0);
    let members = 50;
    let diffs: Vec<f64> = (0..trials)
        .map(|_| {
            let y = vector(&mut rng, 1)[0];
            let good: Vec<f64> = vector(&mut rng, members).iter().copied().collect();
            let bad: Vec<f64> = good.iter().map(|v| 0.5 + 1.5 * v).collect();
            crps_univariate(&bad, y).expect("crps") - crps_univariate(&good, y).expect("crps")
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / trials as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
    let z = mean / (sd / (trials as f64).sqrt());
    report(
        "CRPS correctness",
        worst,
        1e-6,
        worst < 1e-6 && z > 3.0,
        start,
        format!("propriety margin {z:.1} standard errors over {trials} trials"),
    )
}

/// The whole suite at acceptance sizes.
pub fn run_all(seed: u64) -> Vec<OracleReport> {
    vec![
        direct_vs_iterative(seed, 200),
        order_independence(seed, 200),
        blue_optimality(seed, 50, 100),
        esrf_exactness(seed, 100),
        q_estimation(seed, 20_000, 100_000),
        crps_correctness(seed, 200, 20_000),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn numeric_crps_examples() {
        assert!((crps_numeric(&[1.0], 3.5, 4) - 2.5).abs() < 1e-12);
        assert!((crps_numeric(&[0.0, 1.0], 0.0, 4) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn small_suite_passes() {
        for r in [direct_vs_iterative(1, 20), order_independence(1, 10), esrf_exactness(1, 10)] {
            assert!(r.passed, "{r}");
        }
    }
}

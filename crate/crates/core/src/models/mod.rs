//! Forecast models, the fixed-step RK4 integrator and inter-space maps.

pub mod lorenz96;

pub use lorenz96::{
    lorenz96_tendency, lorenz96_two_scale_tendency, Lorenz96, Lorenz96Variant, TwoScaleLorenz96, TwoScaleParams,
};

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::filter::{compute_model_obs_operator, Ensemble};
use crate::{Error, Matrix, Real, Result, Vector};

/// Autonomous vector field `dx/dt = f(x)`.
pub trait Dynamics<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `f(x)` into `out`; both slices have length [`Dynamics::dim`].
    fn tendency_into(&self, x: &[T], out: &mut [T]);

    fn tendency(&self, x: &Vector<T>) -> Vector<T> {
        let mut out = Vector::zeros(x.len());
        self.tendency_into(x.as_slice(), out.as_mut_slice());
        out
    }
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<T: Real, F>(f: F, x: &Vector<T>, dt: T) -> Result<Vector<T>>
where
    F: Fn(&Vector<T>) -> Vector<T>,
{
    if !(dt > T::zero()) {
        return Err(Error::invalid("time step must be positive"));
    }
    let half = dt * T::lit(0.5);
    let k1 = f(x);
    let k2 = f(&(x + &k1 * half));
    let k3 = f(&(x + &k2 * half));
    let k4 = f(&(x + &k3 * dt));
    let out = x + (k1 + (k2 + k3) * T::lit(2.0) + k4) * (dt / T::lit(6.0));
    if out.iter().any(|v| !v.finite()) {
        return Err(Error::Blowup { step: 0 });
    }
    Ok(out)
}

/// Scratch buffers for repeated RK4 steps of one dynamics.
struct Rk4Scratch<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    stage: Vec<T>,
}

impl<T: Real> Rk4Scratch<T> {
    fn new(n: usize) -> Self {
        Rk4Scratch {
            k1: vec![T::zero(); n],
            k2: vec![T::zero(); n],
            k3: vec![T::zero(); n],
            k4: vec![T::zero(); n],
            stage: vec![T::zero(); n],
        }
    }

    fn step(&mut self, dynamics: &dyn Dynamics<T>, x: &mut [T], dt: T) {
        let half = dt * T::lit(0.5);
        dynamics.tendency_into(x, &mut self.k1);
        for i in 0..x.len() {
            self.stage[i] = x[i] + self.k1[i] * half;
        }
        dynamics.tendency_into(&self.stage, &mut self.k2);
        for i in 0..x.len() {
            self.stage[i] = x[i] + self.k2[i] * half;
        }
        dynamics.tendency_into(&self.stage, &mut self.k3);
        for i in 0..x.len() {
            self.stage[i] = x[i] + self.k3[i] * dt;
        }
        dynamics.tendency_into(&self.stage, &mut self.k4);
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        for i in 0..x.len() {
            x[i] += (self.k1[i] + (self.k2[i] + self.k3[i]) * two + self.k4[i]) * sixth;
        }
    }
}

/// Advances `x` by `steps` RK4 steps of size `dt`.
pub fn integrate_state<T: Real>(dynamics: &dyn Dynamics<T>, x: &Vector<T>, dt: T, steps: usize) -> Result<Vector<T>> {
    if x.len() != dynamics.dim() {
        return Err(Error::invalid(format!(
            "state has dimension {}, model expects {}",
            x.len(),
            dynamics.dim()
        )));
    }
    let mut out = x.clone();
    let mut scratch = Rk4Scratch::new(x.len());
    for step in 0..steps {
        scratch.step(dynamics, out.as_mut_slice(), dt);
        if out.iter().any(|v| !v.finite()) {
            return Err(Error::Blowup { step: step + 1 });
        }
    }
    Ok(out)
}

/// Number of `dt` steps in `window`; the window must be a multiple of `dt`.
pub fn steps_in_window<T: Real>(window: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) {
        return Err(Error::invalid("time step must be positive"));
    }
    if window < T::zero() {
        return Err(Error::invalid("integration window must be non-negative"));
    }
    let ratio = (window / dt).to_f64_lossy();
    let steps = ratio.round();
    let slack = 1e-9_f64.max(4.0 * T::eps().to_f64_lossy());
    if (steps - ratio).abs() * dt.to_f64_lossy() > slack * window.to_f64_lossy().max(1.0) {
        return Err(Error::invalid(format!(
            "window {window} is not a multiple of the time step {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Linear map between state spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap<T: Real>(pub Matrix<T>);

impl<T: Real> LinearMap<T> {
    pub fn identity(n: usize) -> Self {
        LinearMap(Matrix::identity(n, n))
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn apply(&self, x: &Vector<T>) -> Vector<T> {
        &self.0 * x
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_square()
            && self
                .0
                .iter()
                .enumerate()
                .all(|(k, v)| *v == if k % (self.0.nrows() + 1) == 0 { T::one() } else { T::zero() })
    }

    /// Inverse of a square invertible map.
    pub fn inverse(&self) -> Option<LinearMap<T>> {
        if self.is_identity() {
            return Some(self.clone());
        }
        if !self.0.is_square() {
            return None;
        }
        self.0.clone().try_inverse().map(LinearMap)
    }
}

/// Selection `[I_D | 0]` of the large-scale block from the column-stacked
/// two-scale layout with `per_large` small-scale variables per site.
pub fn x_projection_map<T: Real>(large: usize, per_large: usize) -> LinearMap<T> {
    LinearMap(Matrix::from_fn(large, large * (per_large + 1), |i, j| {
        if i == j {
            T::one()
        } else {
            T::zero()
        }
    }))
}

/// A forecast model: dynamics, time step, its map from the reference space
/// and its own observation operator.
#[derive(Clone)]
pub struct ModelSystem<T: Real> {
    pub name: String,
    pub dynamics: Arc<dyn Dynamics<T>>,
    pub dt: T,
    /// `G_m`: reference space → model space (`n_m × n_ref`).
    pub from_reference: LinearMap<T>,
    /// `H_m`: model space → observation space (`p × n_m`).
    pub obs_operator: Matrix<T>,
    /// Ensemble size `N_m`.
    pub members: usize,
    /// Additive noise shared by all members after each integration window.
    pub noise: Option<AdditiveNoise<T>>,
}

/// Noise `root·z`, `z ~ N(0, I)`, drawn once per window and added to every
/// member; `key` names its random stream.
#[derive(Debug, Clone)]
pub struct AdditiveNoise<T: Real> {
    pub root: Matrix<T>,
    pub key: u64,
}

impl<T: Real> AdditiveNoise<T> {
    /// Noise with covariance `q` (symmetric square root).
    pub fn from_covariance(q: &Matrix<T>, key: u64) -> Result<Self> {
        let root = crate::linalg::symmetric_sqrt(q)?;
        Ok(AdditiveNoise { root, key })
    }
}

impl<T: Real> fmt::Debug for ModelSystem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSystem")
            .field("name", &self.name)
            .field("dim", &self.dynamics.dim())
            .field("dt", &self.dt)
            .field("members", &self.members)
            .finish()
    }
}

impl<T: Real> ModelSystem<T> {
    /// Builds a model whose observation operator is derived as `H·G_m†` from
    /// the reference-space operator `h`.
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn Dynamics<T>>,
        dt: T,
        from_reference: LinearMap<T>,
        h: &Matrix<T>,
        members: usize,
    ) -> Result<Self> {
        let obs_operator = compute_model_obs_operator(from_reference.matrix(), h)?;
        let model = ModelSystem {
            name: name.into(),
            dynamics,
            dt,
            from_reference,
            obs_operator,
            members,
            noise: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_noise(mut self, noise: AdditiveNoise<T>) -> Result<Self> {
        if noise.root.nrows() != self.dim() || noise.root.ncols() != self.dim() {
            return Err(Error::invalid(format!("{}: noise root has the wrong shape", self.name)));
        }
        self.noise = Some(noise);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    /// Adds one shared noise draw to every member; identity without noise.
    pub fn add_noise<R: rand::Rng + ?Sized>(&self, e: Ensemble<T>, rng: &mut R) -> Result<Ensemble<T>> {
        let Some(noise) = &self.noise else {
            return Ok(e);
        };
        let z = crate::rng::standard_normal_matrix::<T, R>(rng, self.dim(), 1);
        let shift = &noise.root * z;
        let mut x = e.into_members();
        for mut col in x.column_iter_mut() {
            col += &shift;
        }
        Ensemble::new(x)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) {
            return Err(Error::invalid(format!("{}: time step must be positive", self.name)));
        }
        if self.members < 2 {
            return Err(Error::invalid(format!("{}: needs at least 2 members", self.name)));
        }
        if self.from_reference.rows() != self.dim() {
            return Err(Error::invalid(format!(
                "{}: G has {} rows for a {}-dimensional model",
                self.name,
                self.from_reference.rows(),
                self.dim()
            )));
        }
        if self.obs_operator.ncols() != self.dim() {
            return Err(Error::invalid(format!("{}: H_m does not match model dimension", self.name)));
        }
        Ok(())
    }

    /// Integrates one state over `window` time units.
    pub fn advance(&self, x: &Vector<T>, window: T) -> Result<Vector<T>> {
        let steps = steps_in_window(window, self.dt)?;
        integrate_state(self.dynamics.as_ref(), x, self.dt, steps)
    }
}

/// Advances every member independently over `window` (parallel over members).
pub fn integrate<T: Real>(model: &ModelSystem<T>, e: &Ensemble<T>, window: T) -> Result<Ensemble<T>> {
    let steps = steps_in_window(window, model.dt)?;
    if e.dim() != model.dim() {
        return Err(Error::invalid(format!(
            "{}: ensemble has dimension {}, model expects {}",
            model.name,
            e.dim(),
            model.dim()
        )));
    }
    if steps == 0 {
        return Ok(e.clone());
    }
    let columns: Vec<Vector<T>> = (0..e.size())
        .into_par_iter()
        .map(|i| integrate_state(model.dynamics.as_ref(), &e.member(i), model.dt, steps))
        .collect::<Result<_>>()?;
    Ensemble::new(Matrix::from_columns(&columns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rk4_zero_field_and_exponential() {
        let x = Vector::from_vec(vec![1.5, -2.0]);
        let same = rk4_step(|v: &Vector<f64>| Vector::zeros(v.len()), &x, 0.1).unwrap();
        assert_eq!(same, x);
        let one = Vector::from_vec(vec![1.0]);
        let h = 0.05f64;
        let next = rk4_step(|v: &Vector<f64>| -v, &one, h).unwrap();
        // One RK4 step on y' = −y is the degree-4 Taylor polynomial of e^{−h}.
        let taylor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((next[0] - taylor).abs() < 1e-15);
        // Local truncation error h⁵/120 ≈ 2.6e-9.
        assert!((next[0] - (-h).exp()).abs() < 3e-9);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Global error at t = 1 on y' = −y for dt and dt/2.
        let err = |dt: f64| {
            let steps = (1.0 / dt).round() as usize;
            let mut y = Vector::from_vec(vec![1.0]);
            for _ in 0..steps {
                y = rk4_step(|v: &Vector<f64>| -v, &y, dt).unwrap();
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let order = (err(0.1) / err(0.05)).log2();
        assert!((order - 4.0).abs() < 0.1, "fitted order {order}");
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 1.6);
    }

    #[test]
    fn rk4_reports_blowup() {
        let x = Vector::from_vec(vec![1e300]);
        assert!(matches!(
            rk4_step(|v: &Vector<f64>| v.map(|a| a * a), &x, 1.0),
            Err(Error::Blowup { .. })
        ));
    }

    #[test]
    fn window_step_counting() {
        assert_eq!(steps_in_window(0.2, 0.05).unwrap(), 4);
        assert_eq!(steps_in_window(0.05, 0.005).unwrap(), 10);
        assert_eq!(steps_in_window(0.0, 0.05).unwrap(), 0);
        assert!(steps_in_window(0.12, 0.05).is_err());
    }

    fn l96_model(members: usize) -> ModelSystem<f64> {
        let dynamics = Arc::new(Lorenz96::new(vec![8.0; 8], Lorenz96Variant::Conventional).unwrap());
        ModelSystem::new("l96", dynamics, 0.05, LinearMap::identity(8), &Matrix::identity(8, 8), members).unwrap()
    }

    #[test]
    fn integrate_zero_window_and_concatenation() {
        let model = l96_model(3);
        let e = Ensemble::new(Matrix::from_fn(8, 3, |i, j| 8.0 + 0.1 * (i as f64) - 0.2 * j as f64)).unwrap();
        assert_eq!(integrate(&model, &e, 0.0).unwrap(), e);
        let split = integrate(&model, &integrate(&model, &e, 0.2).unwrap(), 0.3).unwrap();
        let whole = integrate(&model, &e, 0.5).unwrap();
        assert_eq!(split, whole);
        assert!(integrate(&model, &e, 0.13).is_err());
    }

    #[test]
    fn parallel_matches_sequential_members() {
        let model = l96_model(4);
        let e = Ensemble::new(Matrix::from_fn(8, 4, |i, j| 8.0 + ((i * 3 + j) % 5) as f64 * 0.3)).unwrap();
        let par = integrate(&model, &e, 1.0).unwrap();
        for j in 0..4 {
            let seq = model.advance(&e.member(j), 1.0).unwrap();
            assert_eq!(par.member(j), seq);
        }
    }

    #[test]
    fn projection_map_selects_large_scales() {
        let g = x_projection_map::<f64>(5, 0);
        assert!(g.is_identity());
        let g = x_projection_map::<f64>(4, 2);
        assert_eq!(g.matrix().shape(), (4, 12));
        let z = Vector::from_fn(12, |i, _| if i < 4 { i as f64 + 1.0 } else { 0.0 });
        assert_eq!(g.apply(&z).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        let p = crate::linalg::pseudoinverse(g.matrix());
        assert_relative_eq!(p, g.matrix().transpose(), epsilon = 1e-14);
    }

    #[test]
    fn model_validation() {
        let dynamics: Arc<dyn Dynamics<f64>> = Arc::new(Lorenz96::new(vec![8.0; 4], Lorenz96Variant::Conventional).unwrap());
        let bad = ModelSystem::new("bad", dynamics.clone(), 0.05, LinearMap::identity(5), &Matrix::identity(5, 5), 3);
        assert!(bad.is_err());
        let bad = ModelSystem::new("bad", dynamics, 0.05, LinearMap::identity(4), &Matrix::identity(4, 4), 1);
        assert!(bad.is_err());
    }
}

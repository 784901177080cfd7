//! Truth runs, observations and model construction for twin experiments.

use std::sync::Arc;

use mmkf_core::linalg::localization::{build_localization, LocalizationSpec};
use mmkf_core::model_error::diagonal_basis;
use mmkf_core::models::{
    integrate_state, steps_in_window, x_projection_map, Dynamics, Lorenz96, Lorenz96Variant, TwoScaleLorenz96,
    TwoScaleParams,
};
use mmkf_core::rng::{standard_normal_matrix, stream, Purpose};
use mmkf_core::{AdditiveNoise, Ensemble, LinearMap, Matrix64, ModelErrorState, ModelSystem, Observation, Vector64};
use rand::Rng;

use crate::config::{forcing_profile, ExperimentConfig, ModelSpec, QBasis, Resolution, TruthSpec, Variant};
use crate::HarnessError;

fn variant(v: Variant) -> Lorenz96Variant {
    match v {
        Variant::Conventional => Lorenz96Variant::Conventional,
        Variant::Literal => Lorenz96Variant::Literal,
    }
}

/// Dynamics for a forcing profile on the truth's layout.
pub fn build_dynamics(
    truth: &TruthSpec,
    forcing: &[f64],
    v: Variant,
    two_scale: bool,
) -> Result<Arc<dyn Dynamics<f64>>, HarnessError> {
    let profile = forcing_profile(forcing, truth.sites);
    Ok(if two_scale && truth.per_large > 0 {
        Arc::new(TwoScaleLorenz96::new(TwoScaleParams {
            forcing: profile,
            h: truth.h,
            b: truth.b,
            c: truth.c,
            per_large: truth.per_large,
            variant: variant(v),
        })?)
    } else {
        Arc::new(Lorenz96::new(profile, variant(v))?)
    })
}

/// Truth trajectory at analysis times with its climatology.
#[derive(Debug, Clone)]
pub struct Truth {
    /// `states[c]` is the truth at analysis time `c`.
    pub states: Vec<Vector64>,
    /// Variance per variable class (large, then small scale) of a free run.
    pub class_variance: Vec<f64>,
    /// Climatological standard deviation over all variables.
    pub spread: f64,
}

fn class_of(i: usize, sites: usize) -> usize {
    usize::from(i >= sites)
}

/// Spins up the truth, samples a free run of the same length for the
/// climatology and then records `count + 1` analysis-time states.
pub fn build_truth(config: &ExperimentConfig, count: usize) -> Result<Truth, HarnessError> {
    let t = &config.truth;
    let dynamics = build_dynamics(t, &t.forcing, t.variant, true)?;
    let n = dynamics.dim();
    let mut rng = stream(config.seed, Purpose::Truth, 0, 0);
    let profile = forcing_profile(&t.forcing, t.sites);
    let mut x = Vector64::from_fn(n, |i, _| {
        let base = if i < t.sites { profile[i] } else { 0.0 };
        base + 0.01 * rng.random_range(-1.0..1.0)
    });
    let spin_steps = steps_in_window(t.spinup, t.dt)?;
    x = integrate_state(dynamics.as_ref(), &x, t.dt, spin_steps)?;
    let window_steps = steps_in_window(config.window, t.dt)?;

    let samples = ((t.spinup / config.window).round() as usize).max(100);
    let classes = if t.per_large > 0 { 2 } else { 1 };
    let (mut sum, mut sum_sq, mut counts) = (vec![0.0; classes], vec![0.0; classes], vec![0usize; classes]);
    let mut z = x.clone();
    for _ in 0..samples {
        z = integrate_state(dynamics.as_ref(), &z, t.dt, window_steps)?;
        for (i, v) in z.iter().enumerate() {
            let k = class_of(i, t.sites);
            sum[k] += v;
            sum_sq[k] += v * v;
            counts[k] += 1;
        }
    }
    let class_variance: Vec<f64> = (0..classes)
        .map(|k| {
            let c = counts[k] as f64;
            let mean = sum[k] / c;
            sum_sq[k] / c - mean * mean
        })
        .collect();
    let total: f64 = (0..classes).map(|k| class_variance[k] * counts[k] as f64).sum();
    let spread = (total / counts.iter().sum::<usize>() as f64).sqrt();

    let mut states = Vec::with_capacity(count + 1);
    states.push(x.clone());
    for _ in 0..count {
        x = integrate_state(dynamics.as_ref(), &x, t.dt, window_steps)?;
        states.push(x.clone());
    }
    Ok(Truth {
        states,
        class_variance,
        spread,
    })
}

/// Observation operator, error covariance and the observation sequence.
#[derive(Debug, Clone)]
pub struct Observations {
    pub h: Matrix64,
    pub r: Matrix64,
    /// `values[c]` observes `truth.states[c]`.
    pub values: Vec<Vector64>,
}

impl Observations {
    pub fn at(&self, c: usize) -> Result<Observation<f64>, HarnessError> {
        Ok(Observation::linear(self.values[c].clone(), self.r.clone(), self.h.clone())?)
    }
}

/// Indices selected by the mask `i % every == offset`.
pub fn observed_indices(config: &ExperimentConfig) -> Vec<usize> {
    let o = &config.observations;
    (0..config.truth_dim()).filter(|i| i % o.every == o.offset).collect()
}

/// `y = H·x + ν` with `ν ~ N(0, r_diag)`, drawn from `purpose` streams.
pub fn build_observations(
    config: &ExperimentConfig,
    truth: &Truth,
    r_diag: Option<f64>,
    purpose: Purpose,
) -> Result<Observations, HarnessError> {
    let idx = observed_indices(config);
    let n = config.truth_dim();
    let h = Matrix64::from_fn(idx.len(), n, |r, c| if idx[r] == c { 1.0 } else { 0.0 });
    let variances: Vec<f64> = idx
        .iter()
        .map(|&i| match (r_diag, config.observations.r_scale, config.observations.climatological_fraction) {
            (Some(r), _, _) => r,
            (None, Some(r), _) => r,
            (None, None, Some(f)) => f * truth.class_variance[class_of(i, config.truth.sites).min(truth.class_variance.len() - 1)],
            _ => unreachable!("validated"),
        })
        .collect();
    let r = Matrix64::from_diagonal(&Vector64::from_vec(variances.clone()));
    let values = truth
        .states
        .iter()
        .enumerate()
        .map(|(c, x)| {
            let mut rng = stream(config.seed, purpose, c as u64, 0);
            let z = standard_normal_matrix::<f64, _>(&mut rng, idx.len(), 1);
            Vector64::from_fn(idx.len(), |k, _| x[idx[k]] + variances[k].sqrt() * z[k])
        })
        .collect();
    Ok(Observations { h, r, values })
}

/// `B` with `U(0, 1)` entries within `bandwidth` of the diagonal and zeros
/// elsewhere.
pub fn banded_factor(n: usize, bandwidth: usize, seed: u64) -> Matrix64 {
    let mut rng = stream(seed, Purpose::ModelDefinition, 0, 0);
    Matrix64::from_fn(n, n, |i, j| {
        if i.abs_diff(j) <= bandwidth {
            rng.random_range(0.0..1.0)
        } else {
            0.0
        }
    })
}

/// `(B − shift·J)(B − shift·J)ᵀ` for the banded factor `B`.
pub fn banded_noise_covariance(n: usize, bandwidth: usize, shift: f64, seed: u64) -> Matrix64 {
    let c = banded_factor(n, bandwidth, seed).map(|v| v - shift);
    &c * c.transpose()
}

/// Everything the filters need to know about one forecast model.
#[derive(Debug, Clone)]
pub struct ModelSetup {
    pub spec: ModelSpec,
    pub system: ModelSystem<f64>,
    pub error_state: ModelErrorState<f64>,
    pub localization: Option<Matrix64>,
    /// Map from the truth's space to this model's space.
    pub projection: LinearMap<f64>,
}

impl ModelSetup {
    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// The same model as a standalone filter in its own space.
    pub fn standalone(&self, members: usize) -> Result<ModelSetup, HarnessError> {
        let mut system = ModelSystem::new(
            self.system.name.clone(),
            self.system.dynamics.clone(),
            self.system.dt,
            LinearMap::identity(self.dim()),
            &self.system.obs_operator,
            members,
        )?;
        system.noise = self.system.noise.clone();
        Ok(ModelSetup {
            spec: self.spec.clone(),
            system,
            error_state: self.error_state.clone(),
            localization: self.localization.clone(),
            projection: self.projection.clone(),
        })
    }

    /// Observation expressed in this model's own space.
    pub fn own_observation(&self, obs: &Observation<f64>) -> Result<Observation<f64>, HarnessError> {
        Ok(Observation::linear(obs.y.clone(), obs.r.clone(), self.system.obs_operator.clone())?)
    }

    /// Truth mapped into this model's space.
    pub fn project(&self, x: &Vector64) -> Vector64 {
        self.projection.apply(x)
    }
}

fn block_basis(n: usize, block: usize) -> Vec<Matrix64> {
    if block == 1 {
        return diagonal_basis(n);
    }
    (0..n.div_ceil(block))
        .map(|p| Matrix64::from_fn(n, n, |i, j| if i == j && i / block == p { 1.0 } else { 0.0 }))
        .collect()
}

fn full_rank_square(h: &Matrix64) -> bool {
    h.is_square() && h.clone().svd(false, false).singular_values.min() > 1e-10
}

/// Builds every configured model against the reference observation operator.
pub fn build_models(config: &ExperimentConfig, h: &Matrix64) -> Result<Vec<ModelSetup>, HarnessError> {
    let t = &config.truth;
    let n_truth = config.truth_dim();
    let noise_base = config
        .noise
        .as_ref()
        .map(|n| banded_noise_covariance(n_truth, n.bandwidth, n.shift, config.seed));
    config
        .models
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let forcing = spec.forcing.as_deref().unwrap_or(&t.forcing);
            let v = spec.variant.unwrap_or(t.variant);
            let (dynamics, g) = match spec.resolution {
                Resolution::Full => (build_dynamics(t, forcing, v, true)?, LinearMap::identity(n_truth)),
                Resolution::LargeScale => (
                    build_dynamics(t, forcing, v, false)?,
                    x_projection_map(t.sites, t.per_large),
                ),
            };
            let mut system = ModelSystem::new(spec.name.clone(), dynamics, t.dt, g, h, spec.members)?;
            let n = system.dim();
            let f = &config.filter;
            let mut error_state = match (spec.noise_scale, &noise_base) {
                (Some(scale), Some(base)) => {
                    let q = base * scale;
                    system = system.with_noise(AdditiveNoise::from_covariance(&q, m as u64)?)?;
                    ModelErrorState::new(q, f.delta)?
                }
                _ => ModelErrorState::isotropic(n, f.q_initial, f.delta)?,
            };
            let basis = match f.q_basis {
                QBasis::Full => None,
                QBasis::Blocks => Some(block_basis(n, f.q_block)),
                QBasis::Auto if full_rank_square(&system.obs_operator) => None,
                QBasis::Auto => Some(block_basis(n, f.q_block)),
            };
            if let Some(b) = basis {
                error_state = error_state.with_basis(b)?;
            }
            let localization = match (f.localization, spec.resolution) {
                (None, _) => None,
                (Some(radius), Resolution::Full) if t.per_large > 0 => {
                    let (ls, layout) = LocalizationSpec::two_scale(t.sites, t.per_large, Some(radius), f.localization_small);
                    Some(build_localization(&ls, &layout)?)
                }
                (Some(radius), _) => {
                    let (ls, layout) = LocalizationSpec::single_ring(t.sites, Some(radius));
                    Some(build_localization(&ls, &layout)?)
                }
            };
            let projection = system.from_reference.clone();
            Ok(ModelSetup {
                spec: spec.clone(),
                system,
                error_state,
                localization,
                projection,
            })
        })
        .collect()
}

/// `G_m·x₀` plus `N(0, spread·I)` perturbations. Column `j` of model `m`
/// is the same for every run on one seed, so smaller ensembles are prefixes
/// of larger ones.
pub fn initial_ensemble(
    seed: u64,
    model_index: usize,
    center: &Vector64,
    spread: f64,
    members: usize,
) -> Result<Ensemble<f64>, HarnessError> {
    let n = center.len();
    let mut rng = stream(seed, Purpose::InitialEnsemble, 0, model_index as u64);
    let mut x = Matrix64::zeros(n, members);
    for j in 0..members {
        let z = standard_normal_matrix::<f64, _>(&mut rng, n, 1);
        x.set_column(j, &(center + z.column(0) * spread.sqrt()));
    }
    Ok(Ensemble::new(x)?)
}

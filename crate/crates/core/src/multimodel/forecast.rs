//! Multi-model forecasting without observations: the fused forecast at a
//! lead time, and the recursive variant that re-fuses every `τ`.

use super::cycle::{advance_model, CycleStreams, FusionMethod, MultiModelState};
use crate::filter::{apply_inflation, Ensemble};
use crate::model_error::{sample_model_error, ModelErrorState};
use crate::{Error, Real, Result};

/// Forecast of every model and their fusion at one lead.
#[derive(Debug, Clone)]
pub struct ForecastOutput<T: Real> {
    /// Unperturbed model forecasts (model spaces).
    pub raw: Vec<Ensemble<T>>,
    /// Forecasts after adding model-error draws.
    pub perturbed: Vec<Ensemble<T>>,
    /// Fused forecast in the reference space.
    pub combined: Ensemble<T>,
}

fn check_states<T: Real>(state: &MultiModelState<T>, q: &[ModelErrorState<T>]) -> Result<()> {
    if q.len() != state.len() {
        return Err(Error::Config(format!(
            "model-error states for {} models supplied, {} needed",
            q.len(),
            state.len()
        )));
    }
    for (m, (s, model)) in q.iter().zip(&state.models).enumerate() {
        if s.dim() != model.dim() {
            return Err(Error::Config(format!("Q̃ of model {m} has the wrong dimension")));
        }
    }
    Ok(())
}

fn leg<T: Real>(
    state: &MultiModelState<T>,
    starts: &[Ensemble<T>],
    lead: T,
    q: &[ModelErrorState<T>],
    method: FusionMethod,
    streams: &CycleStreams,
) -> Result<ForecastOutput<T>> {
    check_states(state, q)?;
    let raw: Vec<Ensemble<T>> = state
        .models
        .iter()
        .zip(starts)
        .map(|(model, e)| advance_model(model, e, lead, streams))
        .collect::<Result<_>>()?;
    let perturbed: Vec<Ensemble<T>> = raw
        .iter()
        .zip(q)
        .enumerate()
        .map(|(m, (e, s))| sample_model_error(e, s, &mut streams.model_error(m)))
        .collect::<Result<_>>()?;
    let combined = state.fuse(&perturbed, method)?;
    Ok(ForecastOutput {
        raw,
        perturbed,
        combined,
    })
}

/// Integrates every model ensemble to `lead`, adds draws from `Q̃_m(lead)`
/// and fuses the results without an observation update.
pub fn mm_forecast<T: Real>(
    state: &MultiModelState<T>,
    lead: T,
    q_at_lead: &[ModelErrorState<T>],
    method: FusionMethod,
    streams: &CycleStreams,
) -> Result<ForecastOutput<T>> {
    leg(state, &state.ensembles, lead, q_at_lead, method, streams)
}

/// Alternates `τ`-long integrations and fusion `legs` times; after each leg
/// the fused ensemble seeds every model. `schedule[k]` holds `Q̃_m` for
/// leg `k + 1`. With `inflation`, the fused ensemble of leg `k + 1` is
/// inflated by `inflation[k]` before seeding; `combined` stays uninflated.
pub fn recursive_forecast<T: Real>(
    state: &MultiModelState<T>,
    tau: T,
    legs: usize,
    schedule: &[Vec<ModelErrorState<T>>],
    inflation: Option<&[T]>,
    method: FusionMethod,
    streams: &CycleStreams,
) -> Result<Vec<ForecastOutput<T>>> {
    if schedule.len() < legs {
        return Err(Error::Config(format!(
            "model-error schedule covers {} legs, {legs} requested",
            schedule.len()
        )));
    }
    if let Some(l) = inflation {
        if l.len() < legs {
            return Err(Error::Config(format!("inflation covers {} legs, {legs} requested", l.len())));
        }
    }
    let mut seeds = state.ensembles.clone();
    let mut out = Vec::with_capacity(legs);
    for k in 0..legs {
        let s = streams.with_leg(k as u64 + 1);
        let step = leg(state, &seeds, tau, &schedule[k], method, &s)?;
        seeds = match inflation {
            Some(l) => state.distribute(&apply_inflation(&step.combined, l[k])?, method, &s)?,
            None => state.distribute(&step.combined, method, &s)?,
        };
        out.push(step);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinearMap, Lorenz96, Lorenz96Variant, ModelSystem};
    use crate::{Matrix, Vector};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn model(members: usize) -> ModelSystem<f64> {
        let dynamics = Arc::new(Lorenz96::new(vec![8.0; 6], Lorenz96Variant::Conventional).unwrap());
        ModelSystem::new("m", dynamics, 0.05, LinearMap::identity(6), &Matrix::identity(6, 6), members).unwrap()
    }

    fn state(ensembles: Vec<Ensemble<f64>>) -> MultiModelState<f64> {
        let m = ensembles.len();
        let models = ensembles.iter().map(|e| model(e.size())).collect();
        MultiModelState::new(models, ensembles, vec![ModelErrorState::zero(6); m]).unwrap()
    }

    #[test]
    fn identical_models_keep_the_common_mean() {
        let e = Ensemble::new(Matrix::from_fn(6, 8, |i, j| 8.0 + ((i * 5 + j * 3) % 7) as f64 * 0.2)).unwrap();
        let st = state(vec![e.clone(), e.clone()]);
        let q = vec![ModelErrorState::zero(6); 2];
        let out = mm_forecast(&st, 0.0, &q, FusionMethod::Method1, &CycleStreams::new(1, 0)).unwrap();
        assert_relative_eq!(out.combined.mean(), e.mean(), epsilon = 1e-10);
    }

    #[test]
    fn equal_covariances_average_the_means() {
        let base = Matrix::from_fn(6, 8, |i, j| ((i * 5 + j * 3) % 7) as f64 * 0.2);
        let shift_a = Vector::from_fn(6, |i, _| i as f64);
        let shift_b = Vector::from_fn(6, |i, _| -(i as f64) * 0.5 + 1.0);
        let mut a = base.clone();
        let mut b = base.clone();
        for j in 0..8 {
            let mut col = a.column_mut(j);
            col += &shift_a;
            let mut col = b.column_mut(j);
            col += &shift_b;
        }
        let st = state(vec![Ensemble::new(a.clone()).unwrap(), Ensemble::new(b.clone()).unwrap()]);
        let q = vec![ModelErrorState::zero(6); 2];
        let out = mm_forecast(&st, 0.0, &q, FusionMethod::Method1, &CycleStreams::new(1, 0)).unwrap();
        let expected = (a.column_mean() + b.column_mean()) * 0.5;
        assert_relative_eq!(out.combined.mean(), expected, epsilon = 1e-8);
    }

    #[test]
    fn one_leg_recursion_equals_one_shot() {
        let e = Ensemble::new(Matrix::from_fn(6, 8, |i, j| 8.0 + ((i * 5 + j * 3) % 7) as f64 * 0.3)).unwrap();
        let f = Ensemble::new(Matrix::from_fn(6, 8, |i, j| 7.5 + ((i * 2 + j * 5) % 9) as f64 * 0.2)).unwrap();
        let st = state(vec![e, f]);
        let q = vec![ModelErrorState::isotropic(6, 0.05, 0.1).unwrap(); 2];
        let streams = CycleStreams::new(2, 4);
        let rec = recursive_forecast(&st, 0.2, 1, &[q.clone()], None, FusionMethod::Method1, &streams).unwrap();
        let one = mm_forecast(&st, 0.2, &q, FusionMethod::Method1, &streams.with_leg(1)).unwrap();
        assert_eq!(rec[0].combined, one.combined);
        assert!(recursive_forecast(&st, 0.2, 2, &[q], None, FusionMethod::Method1, &streams).is_err());
    }
}

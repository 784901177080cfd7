//! Forecast sweeps from a cycling analysis: single models, the MME and the
//! MM-EnKF, one-shot to each lead and recursively re-fused every window.

use mmkf_core::filter::{apply_inflation, estimate_inflation_factor, forecast_covariance, smooth_inflation};
use mmkf_core::model_error::{init_q_lead, innovation, predictability_covariance, sample_model_error};
use mmkf_core::multimodel::{advance_model, recursive_forecast, CycleStreams, FusionMethod};
use mmkf_core::rng::Purpose;
use mmkf_core::{
    Ensemble, InflationState, LinearMap, Matrix64, ModelErrorState, ModelSystem, MultiModelState, Observation,
};
use rayon::prelude::*;

use crate::assimilation::{build_filter, jobs, score, single_members, Filter, Job};
use crate::config::{ExperimentConfig, Method};
use crate::output::{CycleRecord, Phase, Summary};
use crate::setup::{build_dynamics, build_models, build_observations, build_truth, initial_ensemble, ModelSetup};
use crate::{HarnessError, RunOutput};

/// Stream index of the driving analysis's initial ensemble.
const DRIVER_STREAM: usize = 1 << 20;

struct Product {
    job: Job,
    label: String,
    recursive: bool,
    filter: Filter,
    /// `q[k][m]`: `Q̃_m` for lead (or leg) `k + 1`.
    q: Vec<Vec<ModelErrorState<f64>>>,
    lambda: Vec<InflationState<f64>>,
}

impl Product {
    fn new(
        config: &ExperimentConfig,
        job: Job,
        recursive: bool,
        setups: &[ModelSetup],
        placeholder: &[Ensemble<f64>],
    ) -> Result<Self, HarnessError> {
        let legs = config.forecast.as_ref().map_or(1, |f| f.legs);
        let filter = build_filter(config, &job, setups, placeholder, false)?;
        let q = (1..=legs)
            .map(|k| {
                filter
                    .setups
                    .iter()
                    .map(|s| {
                        let mut st = s.error_state.clone();
                        if !recursive {
                            st.q = init_q_lead(&st.q, k);
                        }
                        st
                    })
                    .collect()
            })
            .collect();
        let lambda = vec![InflationState::new(config.filter.lambda_initial, config.filter.gamma)?; legs];
        let label = if recursive {
            format!("recursive:{}", job.label)
        } else {
            job.label.clone()
        };
        Ok(Product {
            job,
            label,
            recursive,
            filter,
            q,
            lambda,
        })
    }

    fn reference_localization(&self) -> Option<&Matrix64> {
        self.filter.state.localization[self.filter.state.reference()].as_ref()
    }

    /// Updates every `Q̃_m` for lead `k` from the raw forecasts and returns
    /// the inflated fused ensemble after updating `λ̃_k`.
    fn learn(
        &mut self,
        k: usize,
        raw: &[Ensemble<f64>],
        combined: &Ensemble<f64>,
        obs: &Observation<f64>,
    ) -> Result<(Ensemble<f64>, f64), mmkf_core::Error> {
        if self.filter.state.estimate_q {
            for (m, e) in raw.iter().enumerate() {
                let h = &self.filter.state.models[m].obs_operator;
                let d = innovation(&obs.y, h, &e.mean())?;
                self.q[k][m].update(&d, &obs.r, &predictability_covariance(e), h)?;
            }
        }
        let state = self.lambda[k];
        let inflated = apply_inflation(combined, state.lambda)?;
        let h = obs
            .h
            .matrix()
            .ok_or_else(|| mmkf_core::Error::Config("forecast verification needs a linear operator".into()))?;
        let p = forecast_covariance(combined, self.reference_localization())?;
        let hpht = h * p * h.transpose();
        let d = obs.innovation(&combined.mean())?;
        let estimate = estimate_inflation_factor(&d, &obs.r, &hpht)?;
        self.lambda[k] = smooth_inflation(state, estimate)?;
        Ok((inflated, state.lambda))
    }

    fn q_traces(&self, k: usize) -> Vec<f64> {
        self.q[k].iter().map(|s| s.q.trace()).collect()
    }

    fn run_cycle(
        &mut self,
        config: &ExperimentConfig,
        c: usize,
        starts: Vec<Ensemble<f64>>,
        truth: &[mmkf_core::Vector64],
        obs: &[Observation<f64>],
    ) -> Result<Vec<CycleRecord>, HarnessError> {
        let label = self.label.clone();
        let fail = |e: mmkf_core::Error| HarnessError::at(&label, c, e);
        let window = config.window;
        let legs = self.q.len();
        let streams = CycleStreams::new(config.seed, c as u64);
        let method = self.job.method;
        let mut out = Vec::with_capacity(legs);
        self.filter.state.ensembles = starts;
        if self.recursive {
            let lambdas: Vec<f64> = self.lambda.iter().map(|l| l.lambda).collect();
            let legs_out = recursive_forecast(&self.filter.state, window, legs, &self.q, Some(&lambdas), method, &streams)
                .map_err(fail)?;
            for (k, leg) in legs_out.iter().enumerate() {
                let y = self.filter.observation(self.job.single, &obs[k + 1])?;
                let q_traces = self.q_traces(k);
                let (inflated, lambda) = self.learn(k, &leg.raw, &leg.combined, &y).map_err(fail)?;
                let x = self.filter.truth(self.job.single, &truth[k + 1]);
                out.push(record(config, c, k + 1, &label, &inflated, &x, lambda, q_traces)?);
            }
        } else {
            let mut raw = self.filter.state.ensembles.clone();
            for k in 0..legs {
                let s = streams.with_leg(k as u64 + 1);
                raw = self
                    .filter
                    .state
                    .models
                    .iter()
                    .zip(&raw)
                    .map(|(model, e)| advance_model(model, e, window, &s))
                    .collect::<Result<_, _>>()
                    .map_err(fail)?;
                let perturbed: Vec<Ensemble<f64>> = raw
                    .iter()
                    .zip(&self.q[k])
                    .enumerate()
                    .map(|(m, (e, q))| sample_model_error(e, q, &mut s.model_error(m)))
                    .collect::<Result<_, _>>()
                    .map_err(fail)?;
                let combined = self.filter.state.fuse(&perturbed, method).map_err(fail)?;
                let y = self.filter.observation(self.job.single, &obs[k + 1])?;
                let q_traces = self.q_traces(k);
                let (inflated, lambda) = self.learn(k, &raw, &combined, &y).map_err(fail)?;
                let x = self.filter.truth(self.job.single, &truth[k + 1]);
                out.push(record(config, c, k + 1, &label, &inflated, &x, lambda, q_traces)?);
            }
        }
        Ok(out)
    }
}

#[allow(clippy::too_many_arguments)]
fn record(
    config: &ExperimentConfig,
    c: usize,
    k: usize,
    label: &str,
    e: &Ensemble<f64>,
    x: &mmkf_core::Vector64,
    lambda: f64,
    q_traces: Vec<f64>,
) -> Result<CycleRecord, HarnessError> {
    let (r, crps, rx, ry) = score(config, e, x)?;
    Ok(CycleRecord {
        cycle: c,
        phase: Phase::Forecast,
        method: label.to_string(),
        lead: config.window * k as f64,
        rmse: r,
        crps,
        lambda: Some(lambda),
        q_traces,
        rmse_x: rx,
        rmse_y: ry,
    })
}

/// Forecast products in a fixed order: one-shot for every configured
/// method, then the recursive variants.
fn products(config: &ExperimentConfig, setups: &[ModelSetup], x0: &mmkf_core::Vector64) -> Result<Vec<Product>, HarnessError> {
    let fc = config.forecast.as_ref().ok_or_else(|| HarnessError::Config("missing [forecast]".into()))?;
    let mut out = Vec::new();
    let all = jobs(config);
    let placeholder = |job: &Job| crate::assimilation::initial_ensembles(config, job, setups, x0);
    if fc.one_shot {
        for job in &all {
            out.push(Product::new(config, job.clone(), false, setups, &placeholder(job)?)?);
        }
    }
    for method in &fc.recursive {
        let label = match method {
            Method::Mme => "mme",
            Method::Method1 => "method1",
            Method::Method2 => "method2",
            _ => unreachable!("validated"),
        };
        let job = Job {
            label: label.into(),
            models: (0..config.models.len()).collect(),
            method: match method {
                Method::Mme => FusionMethod::Mme,
                Method::Method1 => FusionMethod::Method1,
                _ => FusionMethod::Method2,
            },
            order: None,
            single: false,
            static_b: false,
        };
        out.push(Product::new(config, job.clone(), true, setups, &placeholder(&job)?)?);
    }
    Ok(out)
}

/// Cycling ensemble square-root filter on the truth dynamics whose analyses
/// initialize every forecast.
fn driver(config: &ExperimentConfig, setups: &[ModelSetup], h: &Matrix64, members: usize, x0: &mmkf_core::Vector64) -> Result<MultiModelState<f64>, HarnessError> {
    let t = &config.truth;
    let dynamics = build_dynamics(t, &t.forcing, t.variant, true)?;
    let n = config.truth_dim();
    let system = ModelSystem::new("driver", dynamics, t.dt, LinearMap::identity(n), h, members)?;
    let e = initial_ensemble(config.seed, DRIVER_STREAM, x0, config.filter.initial_spread, members)?;
    Ok(MultiModelState::new(vec![system], vec![e], vec![ModelErrorState::zero(n)])?
        .with_localization(vec![setups[0].localization.clone()])?
        .with_q_estimation(false)
        .with_inflation(Some(InflationState::new(config.filter.lambda_initial, config.filter.gamma)?)))
}

/// Members of the analysis handed to each model: consecutive blocks for
/// the multi-model products, a prefix for singles.
fn slices(config: &ExperimentConfig, setups: &[ModelSetup], product: &Product, analysis: &Ensemble<f64>) -> Result<Vec<Ensemble<f64>>, HarnessError> {
    let mut offset = 0;
    product
        .job
        .models
        .iter()
        .map(|&m| {
            let s = &setups[m];
            let (start, n) = if product.job.single {
                (0, single_members(config, s))
            } else {
                let start = offset;
                offset += s.spec.members;
                (start, s.spec.members)
            };
            let cols: Vec<usize> = (start..start + n).collect();
            Ok(analysis.select(&cols)?.mapped(s.projection.matrix())?)
        })
        .collect()
}

/// Runs the forecast sweep described by `config.forecast`.
pub fn run_forecast_experiment(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let fc = config
        .forecast
        .as_ref()
        .ok_or_else(|| HarnessError::Config("missing [forecast]".into()))?;
    let legs = fc.legs;
    let truth = build_truth(config, config.cycles + legs)?;
    let obs = build_observations(config, &truth, None, Purpose::Observation)?;
    let analysis_obs = build_observations(config, &truth, Some(fc.analysis_r), Purpose::AnalysisObservation)?;
    let setups = build_models(config, &obs.h)?;
    let x0 = &truth.states[0];
    let mut products = products(config, &setups, x0)?;
    let multi: usize = setups.iter().map(|s| s.spec.members).sum();
    let singles = setups.iter().map(|s| single_members(config, s)).max().unwrap_or(0);
    let mut driver = driver(config, &setups, &obs.h, multi.max(singles), x0)?;
    let mut records = Vec::new();
    for c in 1..=config.cycles {
        let streams = CycleStreams::new(config.seed ^ 0x5eed_d21e, c as u64);
        let fail = |e: mmkf_core::Error| HarnessError::at("driver", c, e);
        driver.forecast(config.window, &streams).map_err(fail)?;
        let analysis = driver
            .assimilate(&analysis_obs.at(c)?, FusionMethod::Mme, &streams)
            .map_err(fail)?
            .analysis;
        let future: Vec<Observation<f64>> = (c..=c + legs).map(|k| obs.at(k)).collect::<Result<_, _>>()?;
        let truth_window = &truth.states[c..=c + legs];
        let starts: Vec<Vec<Ensemble<f64>>> = products
            .iter()
            .map(|p| slices(config, &setups, p, &analysis))
            .collect::<Result<_, _>>()?;
        let per_product: Vec<Vec<CycleRecord>> = products
            .par_iter_mut()
            .zip(starts)
            .map(|(p, s)| p.run_cycle(config, c, s, truth_window, &future))
            .collect::<Result<_, _>>()?;
        records.extend(per_product.into_iter().flatten());
    }
    let summary = Summary::from_records(&config.name, config.seed, config.cycles, config.burn_in, &records);
    Ok(RunOutput { records, summary })
}

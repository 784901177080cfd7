//! Cycled twin experiments: every configured method runs over the same
//! truth, observations and initial perturbations.

use mmkf_core::filter::{apply_inflation, InflationState};
use mmkf_core::metrics::{crps_mean, rmse};
use mmkf_core::multimodel::{CycleStreams, DivergenceGuard, FusionMethod};
use mmkf_core::rng::Purpose;
use mmkf_core::{Ensemble, MultiModelState, Observation, Vector64};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Method};
use crate::output::{CycleRecord, Phase, Summary};
use crate::setup::{build_models, build_observations, build_truth, initial_ensemble, ModelSetup, Observations, Truth};
use crate::{HarnessError, RunOutput};

/// One filter to run: a label, its models (indices into the configured
/// list) and how they are combined.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub label: String,
    pub models: Vec<usize>,
    pub method: FusionMethod,
    pub order: Option<Vec<usize>>,
    pub single: bool,
    pub static_b: bool,
}

/// Expands the configured methods into jobs in a fixed order.
pub fn jobs(config: &ExperimentConfig) -> Vec<Job> {
    let all: Vec<usize> = (0..config.models.len()).collect();
    let job = |label: String, method, order, static_b| Job {
        label,
        models: all.clone(),
        method,
        order,
        single: false,
        static_b,
    };
    let mut out = Vec::new();
    for method in &config.methods {
        match method {
            Method::Single => {
                for (m, spec) in config.models.iter().enumerate() {
                    out.push(Job {
                        label: format!("single:{}", spec.name),
                        models: vec![m],
                        method: FusionMethod::Mme,
                        order: None,
                        single: true,
                        static_b: false,
                    });
                }
            }
            Method::Mme => out.push(job("mme".into(), FusionMethod::Mme, None, false)),
            Method::Method1 => out.push(job("method1".into(), FusionMethod::Method1, None, false)),
            Method::Method2 => out.push(job("method2".into(), FusionMethod::Method2, None, false)),
            Method::Static => out.push(job("static".into(), FusionMethod::Method1, None, true)),
        }
    }
    for order in &config.orders {
        let name = order.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-");
        out.push(job(format!("method1@{name}"), FusionMethod::Method1, Some(order.clone()), false));
    }
    out
}

/// A job's filter together with the space its output is scored in.
pub(crate) struct Filter {
    pub state: MultiModelState<f64>,
    /// Models as seen by this filter (standalone for singles).
    pub setups: Vec<ModelSetup>,
}

impl Filter {
    /// Observation in the filter's reference space.
    pub fn observation(&self, single: bool, obs: &Observation<f64>) -> Result<Observation<f64>, HarnessError> {
        if single {
            self.setups[0].own_observation(obs)
        } else {
            Ok(obs.clone())
        }
    }

    /// Truth in the filter's reference space.
    pub fn truth(&self, single: bool, x: &Vector64) -> Vector64 {
        if single {
            self.setups[0].project(x)
        } else {
            x.clone()
        }
    }
}

pub(crate) fn single_members(config: &ExperimentConfig, model: &ModelSetup) -> usize {
    config.filter.single_members.unwrap_or(model.spec.members)
}

/// Builds the filter for `job` with ensembles drawn around `starts[m]`
/// (the truth in model `m`'s space) or taken from `ensembles`.
pub(crate) fn build_filter(
    config: &ExperimentConfig,
    job: &Job,
    setups: &[ModelSetup],
    ensembles: &[Ensemble<f64>],
    inflation: bool,
) -> Result<Filter, HarnessError> {
    let chosen: Vec<ModelSetup> = if job.single {
        let s = &setups[job.models[0]];
        vec![s.standalone(single_members(config, s))?]
    } else {
        job.models.iter().map(|&m| setups[m].clone()).collect()
    };
    let mut state = MultiModelState::new(
        chosen.iter().map(|s| s.system.clone()).collect(),
        ensembles.to_vec(),
        chosen.iter().map(|s| s.error_state.clone()).collect(),
    )?
    .with_localization(chosen.iter().map(|s| s.localization.clone()).collect())?
    .with_q_estimation(config.filter.estimate_q);
    if inflation {
        state = state.with_inflation(Some(InflationState::new(config.filter.lambda_initial, config.filter.gamma)?));
    }
    if let Some(order) = &job.order {
        state = state.with_order(order.clone())?;
    }
    Ok(Filter { state, setups: chosen })
}

/// RMSE, CRPS and the two-scale split of an ensemble against the truth.
pub(crate) fn score(
    config: &ExperimentConfig,
    e: &Ensemble<f64>,
    truth: &Vector64,
) -> Result<(f64, f64, Option<f64>, Option<f64>), HarnessError> {
    let mean = e.mean();
    let total = rmse(&mean, truth)?;
    let crps = crps_mean(e, truth)?;
    let sites = config.truth.sites;
    if config.truth.per_large == 0 {
        return Ok((total, crps, None, None));
    }
    let x = rmse(&mean.rows(0, sites).into_owned(), &truth.rows(0, sites).into_owned())?;
    let y = if e.dim() > sites {
        let len = e.dim() - sites;
        Some(rmse(&mean.rows(sites, len).into_owned(), &truth.rows(sites, len).into_owned())?)
    } else {
        None
    };
    Ok((total, crps, Some(x), y))
}

/// Initial ensembles for the job's models, centred on the truth.
pub(crate) fn initial_ensembles(
    config: &ExperimentConfig,
    job: &Job,
    setups: &[ModelSetup],
    x0: &Vector64,
) -> Result<Vec<Ensemble<f64>>, HarnessError> {
    job.models
        .iter()
        .map(|&m| {
            let s = &setups[m];
            let members = if job.single { single_members(config, s) } else { s.spec.members };
            initial_ensemble(config.seed, m, &s.project(x0), config.filter.initial_spread, members)
        })
        .collect()
}

fn run_job(
    config: &ExperimentConfig,
    job: &Job,
    setups: &[ModelSetup],
    truth: &Truth,
    obs: &Observations,
) -> Result<Vec<CycleRecord>, HarnessError> {
    let ensembles = initial_ensembles(config, job, setups, &truth.states[0])?;
    let mut filter = build_filter(config, job, setups, &ensembles, true)?;
    let mut guard = DivergenceGuard::new(truth.spread);
    let static_start = config
        .filter
        .static_start
        .unwrap_or(config.burn_in.saturating_sub(config.filter.static_averaging))
        .max(1);
    let static_end = static_start + config.filter.static_averaging;
    let mut records = Vec::with_capacity(2 * config.cycles);
    for c in 1..=config.cycles {
        let fail = |e: mmkf_core::Error| HarnessError::at(&job.label, c, e);
        if job.static_b && c == static_start {
            filter.state.start_covariance_averaging();
        }
        if job.static_b && c == static_end {
            filter.state.freeze_static_covariances().map_err(fail)?;
        }
        let streams = CycleStreams::new(config.seed, c as u64);
        filter.state.forecast(config.window, &streams).map_err(fail)?;
        let y = filter.observation(job.single, &obs.at(c)?)?;
        let out = filter.state.assimilate(&y, job.method, &streams).map_err(fail)?;
        let x = filter.truth(job.single, &truth.states[c]);
        let d = &out.diagnostics;
        let prior = apply_inflation(&out.prior, d.lambda_applied).map_err(fail)?;
        for (phase, e, lead) in [(Phase::Forecast, &prior, config.window), (Phase::Analysis, &out.analysis, 0.0)] {
            let (r, crps, rx, ry) = score(config, e, &x).map_err(|e| match e {
                HarnessError::Core(e) => fail(e),
                other => other,
            })?;
            if phase == Phase::Analysis {
                guard.check(c, r).map_err(fail)?;
            }
            records.push(CycleRecord {
                cycle: c,
                phase,
                method: job.label.clone(),
                lead,
                rmse: r,
                crps,
                lambda: Some(d.lambda_applied),
                q_traces: d.q_traces.clone(),
                rmse_x: rx,
                rmse_y: ry,
            });
        }
    }
    Ok(records)
}

/// Runs every configured method over one truth and observation sequence.
pub fn run_twin_experiment(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let truth = build_truth(config, config.cycles)?;
    let obs = build_observations(config, &truth, None, Purpose::Observation)?;
    let setups = build_models(config, &obs.h)?;
    let jobs = jobs(config);
    let per_job: Vec<Vec<CycleRecord>> = jobs
        .par_iter()
        .map(|job| run_job(config, job, &setups, &truth, &obs))
        .collect::<Result<_, _>>()?;
    let records: Vec<CycleRecord> = per_job.into_iter().flatten().collect();
    let summary = Summary::from_records(&config.name, config.seed, config.cycles, config.burn_in, &records);
    Ok(RunOutput { records, summary })
}

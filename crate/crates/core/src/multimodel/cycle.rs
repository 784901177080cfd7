//! Cycling multi-model EnKF: per-model model-error perturbation and `Q̃`
//! estimation, fusion into the reference space, inflation, the observation
//! update, and redistribution to the models.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::filter::{
    covariance_from_anomalies, esrf_analysis, esrf_update, estimate_inflation_factor, forecast_covariance,
    smooth_inflation, Ensemble, InflationState, Observation,
};
use crate::model_error::{innovation, predictability_covariance, sample_model_error, ModelErrorState};
use crate::models::{integrate, LinearMap, ModelSystem};
use crate::rng::{stream, Purpose};
use crate::{Error, Matrix, Real, Result, Vector};

/// How model ensembles are merged before the observation update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMethod {
    /// Fold all models into the reference ensemble.
    Method1,
    /// Fold into every model in turn and pool the results.
    Method2,
    /// Pool the raw ensembles without weighting.
    Mme,
}

/// RNG streams of one cycle; `leg` separates sub-steps such as recursive
/// forecast legs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleStreams {
    pub seed: u64,
    pub cycle: u64,
    pub leg: u64,
}

impl CycleStreams {
    pub fn new(seed: u64, cycle: u64) -> Self {
        CycleStreams { seed, cycle, leg: 0 }
    }

    pub fn with_leg(self, leg: u64) -> Self {
        CycleStreams { leg, ..self }
    }

    pub fn model_error(&self, model: usize) -> ChaCha8Rng {
        stream(self.seed, Purpose::ModelError, self.cycle, (self.leg << 32) | model as u64)
    }

    pub fn model_noise(&self, key: u64) -> ChaCha8Rng {
        stream(self.seed, Purpose::ModelNoise, self.cycle, (self.leg << 32) | key)
    }

    pub fn member_subset(&self, model: usize) -> ChaCha8Rng {
        stream(self.seed, Purpose::MemberSubset, self.cycle, (self.leg << 32) | model as u64)
    }
}

/// Integration of one model ensemble followed by its shared noise draw.
pub fn advance_model<T: Real>(model: &ModelSystem<T>, e: &Ensemble<T>, window: T, streams: &CycleStreams) -> Result<Ensemble<T>> {
    let out = integrate(model, e, window)?;
    match &model.noise {
        Some(noise) => model.add_noise(out, &mut streams.model_noise(noise.key)),
        None => Ok(out),
    }
}

/// Per-cycle bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleDiagnostics<T> {
    /// Inflation factor applied this cycle.
    pub lambda_applied: T,
    /// Raw estimate `λ̂` from this cycle's innovation.
    pub lambda_estimate: Option<T>,
    /// Members entering the observation update.
    pub assimilated_members: usize,
    /// Some innovation covariance was pseudo-solved.
    pub pseudo_solved: bool,
    /// Some least-squares `Q` fit was rank deficient.
    pub q_rank_deficient: bool,
    /// `tr Q̃_m` after this cycle's update.
    pub q_traces: Vec<T>,
}

/// Result of one assimilation cycle.
#[derive(Debug, Clone)]
pub struct CycleOutput<T: Real> {
    /// Fused forecast in the reference space, before inflation.
    pub prior: Ensemble<T>,
    /// Analysis in the reference space.
    pub analysis: Ensemble<T>,
    pub diagnostics: CycleDiagnostics<T>,
}

/// Models, their ensembles and all adaptive statistics of a multi-model
/// filter.
#[derive(Debug, Clone)]
pub struct MultiModelState<T: Real> {
    pub models: Vec<ModelSystem<T>>,
    pub ensembles: Vec<Ensemble<T>>,
    /// `Q̃_m` at the analysis window.
    pub error_states: Vec<ModelErrorState<T>>,
    /// Update `Q̃_m` from innovations each cycle.
    pub estimate_q: bool,
    /// Adaptive multiplicative inflation of the fused ensemble.
    pub inflation: Option<InflationState<T>>,
    /// Localization `ρ_m` in each model's space.
    pub localization: Vec<Option<Matrix<T>>>,
    /// Fusion order; `order[0]` is the reference model.
    pub order: Vec<usize>,
    /// Static `B_m` replacing the ensemble covariances in Method 1.
    pub static_covariances: Option<Vec<Matrix<T>>>,
    averaging: Option<(Vec<Matrix<T>>, usize)>,
}

impl<T: Real> MultiModelState<T> {
    pub fn new(
        models: Vec<ModelSystem<T>>,
        ensembles: Vec<Ensemble<T>>,
        error_states: Vec<ModelErrorState<T>>,
    ) -> Result<Self> {
        let m = models.len();
        if m == 0 {
            return Err(Error::invalid("at least one model is required"));
        }
        if ensembles.len() != m || error_states.len() != m {
            return Err(Error::invalid("need one ensemble and one model-error state per model"));
        }
        let n_ref = models[0].from_reference.cols();
        for (i, model) in models.iter().enumerate() {
            model.validate()?;
            if model.from_reference.cols() != n_ref {
                return Err(Error::invalid(format!("{}: G does not start from the reference space", model.name)));
            }
            if ensembles[i].dim() != model.dim() || ensembles[i].size() != model.members {
                return Err(Error::invalid(format!(
                    "{}: ensemble is {}x{}, expected {}x{}",
                    model.name,
                    ensembles[i].dim(),
                    ensembles[i].size(),
                    model.dim(),
                    model.members
                )));
            }
            if error_states[i].dim() != model.dim() {
                return Err(Error::invalid(format!("{}: Q̃ has the wrong dimension", model.name)));
            }
        }
        let state = MultiModelState {
            localization: vec![None; m],
            order: (0..m).collect(),
            models,
            ensembles,
            error_states,
            estimate_q: true,
            inflation: None,
            static_covariances: None,
            averaging: None,
        };
        state.check_reference()?;
        Ok(state)
    }

    pub fn with_inflation(mut self, inflation: Option<InflationState<T>>) -> Self {
        self.inflation = inflation;
        self
    }

    pub fn with_localization(mut self, localization: Vec<Option<Matrix<T>>>) -> Result<Self> {
        if localization.len() != self.models.len() {
            return Err(Error::invalid("need one localization entry per model"));
        }
        for (rho, model) in localization.iter().zip(&self.models) {
            if let Some(rho) = rho {
                if rho.shape() != (model.dim(), model.dim()) {
                    return Err(Error::invalid(format!("{}: localization has the wrong shape", model.name)));
                }
            }
        }
        self.localization = localization;
        Ok(self)
    }

    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        let m = self.models.len();
        let mut seen = vec![false; m];
        if order.len() != m || order.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::invalid("fusion order must be a permutation of the models"));
        }
        self.order = order;
        self.check_reference()?;
        Ok(self)
    }

    pub fn with_q_estimation(mut self, estimate: bool) -> Self {
        self.estimate_q = estimate;
        self
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Index of the reference model.
    pub fn reference(&self) -> usize {
        self.order[0]
    }

    fn reference_rho(&self) -> Option<&Matrix<T>> {
        self.localization[self.reference()].as_ref()
    }

    fn check_reference(&self) -> Result<()> {
        let r = self.reference();
        if !self.models[r].from_reference.is_identity() {
            return Err(Error::Config(format!(
                "the reference model {} must have G = I",
                self.models[r].name
            )));
        }
        Ok(())
    }

    /// Starts averaging the (localized) perturbed forecast covariances.
    pub fn start_covariance_averaging(&mut self) {
        self.averaging = Some((
            self.models.iter().map(|m| Matrix::zeros(m.dim(), m.dim())).collect(),
            0,
        ));
    }

    /// Freezes the running averages as static covariances.
    pub fn freeze_static_covariances(&mut self) -> Result<()> {
        let (sums, count) = self
            .averaging
            .take()
            .ok_or_else(|| Error::invalid("covariance averaging was never started"))?;
        if count == 0 {
            return Err(Error::invalid("no cycles were averaged"));
        }
        let scale = T::one() / T::from_usize_lossy(count);
        self.static_covariances = Some(sums.into_iter().map(|s| s * scale).collect());
        Ok(())
    }

    /// Integrates every model ensemble over `window`, adding each model's
    /// shared noise if it has any.
    pub fn forecast(&mut self, window: T, streams: &CycleStreams) -> Result<()> {
        for (model, e) in self.models.iter().zip(self.ensembles.iter_mut()) {
            *e = advance_model(model, e, window, streams)?;
        }
        Ok(())
    }

    /// Adds model-error draws and, with observations, updates each `Q̃_m`
    /// from that model's innovation of the unperturbed forecast.
    pub(crate) fn perturb(
        &mut self,
        obs: Option<&Observation<T>>,
        streams: &CycleStreams,
    ) -> Result<(Vec<Ensemble<T>>, bool)> {
        let mut perturbed = Vec::with_capacity(self.len());
        let mut deficient = false;
        for m in 0..self.len() {
            let e = &self.ensembles[m];
            let out = sample_model_error(e, &self.error_states[m], &mut streams.model_error(m)).map_err(|err| err.in_model(m))?;
            if let (true, Some(obs)) = (self.estimate_q, obs) {
                let h = &self.models[m].obs_operator;
                let d = innovation(&obs.y, h, &e.mean())?;
                let pp = predictability_covariance(e);
                deficient |= self.error_states[m].update(&d, &obs.r, &pp, h).map_err(|err| err.in_model(m))?;
            }
            perturbed.push(out);
        }
        if let Some((sums, count)) = self.averaging.as_mut() {
            for (m, e) in perturbed.iter().enumerate() {
                sums[m] += forecast_covariance(e, self.localization[m].as_ref())?;
            }
            *count += 1;
        }
        Ok((perturbed, deficient))
    }

    fn pseudo_observation(&self, e: &Ensemble<T>, m: usize, map: Matrix<T>) -> Result<Observation<T>> {
        let r = match &self.static_covariances {
            Some(b) => b[m].clone(),
            None => forecast_covariance(e, self.localization[m].as_ref())?,
        };
        Observation::linear(e.mean(), r, map)
    }

    fn inverse_maps(&self) -> Result<Vec<LinearMap<T>>> {
        self.models
            .iter()
            .map(|m| {
                m.from_reference.inverse().ok_or_else(|| {
                    Error::Config(format!("{}: map from the reference space is not invertible", m.name))
                })
            })
            .collect()
    }

    /// Fuses perturbed forecasts into one reference-space ensemble.
    pub fn fuse(&self, perturbed: &[Ensemble<T>], method: FusionMethod) -> Result<Ensemble<T>> {
        if perturbed.len() != self.len() {
            return Err(Error::invalid("need one forecast ensemble per model"));
        }
        match method {
            FusionMethod::Method1 => {
                if self.static_covariances.is_some() {
                    return Err(Error::invalid("static covariances are fused through the static chain"));
                }
                let r = self.reference();
                let rho = self.reference_rho();
                crate::multimodel::combine_iterative(
                    perturbed[r].clone(),
                    self.order[1..].iter().map(|&i| (i, i)),
                    |acc, i| {
                        let pseudo =
                            self.pseudo_observation(&perturbed[i], i, self.models[i].from_reference.matrix().clone())?;
                        esrf_analysis(&acc, &pseudo, rho)
                    },
                )
            }
            FusionMethod::Method2 => {
                let inverses = self.inverse_maps()?;
                let pseudo_means: Vec<Vector<T>> = perturbed.iter().map(Ensemble::mean).collect();
                let pseudo_covs: Vec<Matrix<T>> = perturbed
                    .iter()
                    .enumerate()
                    .map(|(l, e)| forecast_covariance(e, self.localization[l].as_ref()))
                    .collect::<Result<_>>()?;
                let parts: Vec<Ensemble<T>> = (0..self.len())
                    .into_par_iter()
                    .map(|m| {
                        let others = (0..self.len()).filter(|&l| l != m).map(|l| (l, l));
                        let folded = crate::multimodel::combine_iterative(perturbed[m].clone(), others, |acc, l| {
                            let cross = if inverses[m].is_identity() {
                                self.models[l].from_reference.matrix().clone()
                            } else {
                                self.models[l].from_reference.matrix() * inverses[m].matrix()
                            };
                            let pseudo = Observation::linear(pseudo_means[l].clone(), pseudo_covs[l].clone(), cross)?;
                            esrf_analysis(&acc, &pseudo, self.localization[m].as_ref())
                        })?;
                        to_reference(&folded, &inverses[m])
                    })
                    .collect::<Result<_>>()?;
                Ensemble::concat(&parts)
            }
            FusionMethod::Mme => {
                let inverses = self.inverse_maps()?;
                let parts: Vec<Ensemble<T>> = perturbed
                    .iter()
                    .zip(&inverses)
                    .map(|(e, inv)| to_reference(e, inv))
                    .collect::<Result<_>>()?;
                Ensemble::concat(&parts)
            }
        }
    }

    /// Hands a reference-space ensemble back to the models.
    ///
    /// Method 1 maps the whole ensemble with `G_m` and draws a random
    /// subset of `N_m` members where needed; pooled ensembles are split by
    /// member identity.
    pub fn distribute(&self, combined: &Ensemble<T>, method: FusionMethod, streams: &CycleStreams) -> Result<Vec<Ensemble<T>>> {
        match method {
            FusionMethod::Method1 => (0..self.len())
                .map(|m| {
                    let model = &self.models[m];
                    let need = model.members;
                    if combined.size() < need {
                        return Err(Error::Config(format!(
                            "{}: needs {need} members but the reference ensemble has {}",
                            model.name,
                            combined.size()
                        )));
                    }
                    let chosen = if combined.size() == need {
                        combined.clone()
                    } else {
                        let mut idx = sample(&mut streams.member_subset(m), combined.size(), need).into_vec();
                        idx.sort_unstable();
                        combined.select(&idx)?
                    };
                    from_reference(&chosen, &model.from_reference)
                })
                .collect(),
            FusionMethod::Method2 | FusionMethod::Mme => {
                let total: usize = self.models.iter().map(|m| m.members).sum();
                if combined.size() != total {
                    return Err(Error::invalid("pooled ensemble size does not match the models"));
                }
                let mut at = 0;
                let mut out = Vec::with_capacity(self.len());
                for model in &self.models {
                    let cols: Vec<usize> = (at..at + model.members).collect();
                    at += model.members;
                    let block = if self.len() == 1 { combined.clone() } else { combined.select(&cols)? };
                    out.push(from_reference(&block, &model.from_reference)?);
                }
                Ok(out)
            }
        }
    }

    /// Inflates by the current `λ̃`, assimilates `obs`, then updates `λ̃`
    /// from this cycle's innovation.
    fn observe(
        &mut self,
        mean: &Vector<T>,
        anomalies: Matrix<T>,
        background: Matrix<T>,
        obs: &Observation<T>,
    ) -> Result<(Ensemble<T>, T, Option<T>, bool)> {
        let lambda = self.inflation.map(|s| s.lambda).unwrap_or_else(T::one);
        let (x, p) = if lambda == T::one() {
            (anomalies, background)
        } else {
            (anomalies * lambda.sqrt(), background * lambda)
        };
        let update = esrf_update(mean, &x, &p, obs, false)?;
        let mut estimate = None;
        if let Some(state) = self.inflation {
            let hpht = &update.hpht * (T::one() / lambda);
            let est = estimate_inflation_factor(&update.innovation, &obs.r, &hpht)?;
            self.inflation = Some(smooth_inflation(state, est)?);
            estimate = Some(est);
        }
        let analysis = Ensemble::from_moments(&update.mean, &update.anomalies)?;
        Ok((analysis, lambda, estimate, update.pseudo_solved))
    }

    /// Static-covariance Method 1: the fold and the observation update use
    /// the chained static covariance instead of ensemble statistics.
    fn static_chain(&self, perturbed: &[Ensemble<T>]) -> Result<(Vector<T>, Matrix<T>, Matrix<T>, bool)> {
        let b = self.static_covariances.as_ref().expect("checked by caller");
        let r = self.reference();
        let (mut mean, mut x) = perturbed[r].moments();
        let mut p = b[r].clone();
        let mut pseudo_solved = false;
        for &i in &self.order[1..] {
            let pseudo = self.pseudo_observation(&perturbed[i], i, self.models[i].from_reference.matrix().clone())?;
            let upd = esrf_update(&mean, &x, &p, &pseudo, true).map_err(|e| e.in_model(i))?;
            pseudo_solved |= upd.pseudo_solved;
            mean = upd.mean;
            x = upd.anomalies;
            p = upd.covariance.expect("requested");
        }
        Ok((mean, x, p, pseudo_solved))
    }

    /// One analysis cycle at an observation time; the ensembles must
    /// already hold the forecasts valid at that time.
    pub fn assimilate(&mut self, obs: &Observation<T>, method: FusionMethod, streams: &CycleStreams) -> Result<CycleOutput<T>> {
        let (perturbed, q_rank_deficient) = self.perturb(Some(obs), streams)?;
        let (prior, analysis, lambda, estimate, pseudo_solved) = if self.static_covariances.is_some() {
            if method != FusionMethod::Method1 {
                return Err(Error::Config("static covariances are only supported with Method 1".into()));
            }
            let (mean, x, p, chain_pseudo) = self.static_chain(&perturbed)?;
            let prior = Ensemble::from_moments(&mean, &x)?;
            let (analysis, lambda, estimate, obs_pseudo) = self.observe(&mean, x, p, obs)?;
            (prior, analysis, lambda, estimate, chain_pseudo || obs_pseudo)
        } else {
            let prior = self.fuse(&perturbed, method)?;
            let (mean, x) = prior.moments();
            let p = covariance_from_anomalies(&x, self.reference_rho())?;
            let (analysis, lambda, estimate, pseudo) = self.observe(&mean, x, p, obs)?;
            (prior, analysis, lambda, estimate, pseudo)
        };
        self.ensembles = self.distribute(&analysis, method, streams)?;
        let diagnostics = CycleDiagnostics {
            lambda_applied: lambda,
            lambda_estimate: estimate,
            assimilated_members: analysis.size(),
            pseudo_solved,
            q_rank_deficient,
            q_traces: self.error_states.iter().map(|s| s.q.trace()).collect(),
        };
        Ok(CycleOutput {
            prior,
            analysis,
            diagnostics,
        })
    }
}

fn to_reference<T: Real>(e: &Ensemble<T>, inverse: &LinearMap<T>) -> Result<Ensemble<T>> {
    if inverse.is_identity() {
        Ok(e.clone())
    } else {
        e.mapped(inverse.matrix())
    }
}

fn from_reference<T: Real>(e: &Ensemble<T>, g: &LinearMap<T>) -> Result<Ensemble<T>> {
    if g.is_identity() {
        Ok(e.clone())
    } else {
        e.mapped(g.matrix())
    }
}

/// One Method 1 cycle (fold into the reference, then observe).
pub fn mm_enkf_step_method1<T: Real>(
    state: &mut MultiModelState<T>,
    obs: &Observation<T>,
    streams: &CycleStreams,
) -> Result<CycleOutput<T>> {
    state.assimilate(obs, FusionMethod::Method1, streams)
}

/// One Method 2 cycle (fold into every model, pool, then observe).
pub fn mm_enkf_step_method2<T: Real>(
    state: &mut MultiModelState<T>,
    obs: &Observation<T>,
    streams: &CycleStreams,
) -> Result<CycleOutput<T>> {
    state.assimilate(obs, FusionMethod::Method2, streams)
}

/// Flags divergence once the analysis error stays above `factor` times the
/// climatological spread for `patience` consecutive cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceGuard {
    pub factor: f64,
    pub patience: usize,
    pub spread: f64,
    streak: usize,
}

impl DivergenceGuard {
    pub fn new(spread: f64) -> Self {
        DivergenceGuard {
            factor: 10.0,
            patience: 50,
            spread,
            streak: 0,
        }
    }

    pub fn check(&mut self, cycle: usize, rmse: f64) -> Result<()> {
        if !rmse.is_finite() || rmse > self.factor * self.spread {
            self.streak += 1;
            if self.streak >= self.patience || !rmse.is_finite() {
                return Err(Error::Divergence { cycle });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::esrf_analysis;
    use crate::models::{Lorenz96, Lorenz96Variant};
    use crate::rng::standard_normal_matrix;
    use std::sync::Arc;

    fn model(name: &str, forcing: f64, members: usize) -> ModelSystem<f64> {
        let dynamics = Arc::new(Lorenz96::new(vec![forcing; 8], Lorenz96Variant::Conventional).unwrap());
        ModelSystem::new(name, dynamics, 0.05, LinearMap::identity(8), &Matrix::identity(8, 8), members).unwrap()
    }

    fn ensemble(members: usize, salt: u64) -> Ensemble<f64> {
        let mut rng = stream(salt, Purpose::Custom, 0, 0);
        let z: Matrix<f64> = standard_normal_matrix(&mut rng, 8, members);
        Ensemble::new(z.add_scalar(3.0)).unwrap()
    }

    fn obs() -> Observation<f64> {
        Observation::linear(Vector::from_element(8, 3.2), Matrix::identity(8, 8) * 0.25, Matrix::identity(8, 8)).unwrap()
    }

    #[test]
    fn single_model_method1_is_plain_esrf() {
        let e = ensemble(10, 1);
        let mut state = MultiModelState::new(vec![model("a", 8.0, 10)], vec![e.clone()], vec![ModelErrorState::zero(8)])
            .unwrap()
            .with_q_estimation(false);
        let out = mm_enkf_step_method1(&mut state, &obs(), &CycleStreams::new(3, 0)).unwrap();
        let plain = esrf_analysis(&e, &obs(), None).unwrap();
        assert_eq!(out.analysis, plain);
        assert_eq!(state.ensembles[0], plain);

        let mut state2 = MultiModelState::new(vec![model("a", 8.0, 10)], vec![e], vec![ModelErrorState::zero(8)])
            .unwrap()
            .with_q_estimation(false);
        let out2 = mm_enkf_step_method2(&mut state2, &obs(), &CycleStreams::new(3, 0)).unwrap();
        assert_eq!(out2.analysis, plain);
    }

    #[test]
    fn method2_assimilates_all_members_and_splits_back() {
        let models = vec![model("a", 8.0, 6), model("b", 9.0, 7), model("c", 7.0, 5)];
        let ens = vec![ensemble(6, 1), ensemble(7, 2), ensemble(5, 3)];
        let q = vec![ModelErrorState::isotropic(8, 0.1, 1e-3).unwrap(); 3];
        let mut state = MultiModelState::new(models, ens, q).unwrap();
        let out = mm_enkf_step_method2(&mut state, &obs(), &CycleStreams::new(4, 1)).unwrap();
        assert_eq!(out.diagnostics.assimilated_members, 18);
        let sizes: Vec<usize> = state.ensembles.iter().map(Ensemble::size).collect();
        assert_eq!(sizes, vec![6, 7, 5]);
        assert_eq!(state.ensembles[1].members(), &out.analysis.members().columns(6, 7).into_owned());
    }

    #[test]
    fn method1_subsets_reference_members() {
        let models = vec![model("a", 8.0, 9), model("b", 9.0, 4)];
        let ens = vec![ensemble(9, 1), ensemble(4, 2)];
        let q = vec![ModelErrorState::zero(8); 2];
        let mut state = MultiModelState::new(models, ens, q).unwrap();
        let out = mm_enkf_step_method1(&mut state, &obs(), &CycleStreams::new(4, 1)).unwrap();
        assert_eq!(out.diagnostics.assimilated_members, 9);
        assert_eq!(state.ensembles[1].size(), 4);
        for j in 0..4 {
            let col = state.ensembles[1].member(j);
            assert!((0..9).any(|k| out.analysis.member(k) == col));
        }
        // Too few reference members is a configuration error.
        let models = vec![model("a", 8.0, 3), model("b", 9.0, 4)];
        let mut state = MultiModelState::new(models, vec![ensemble(3, 1), ensemble(4, 2)], vec![ModelErrorState::zero(8); 2]).unwrap();
        assert!(matches!(mm_enkf_step_method1(&mut state, &obs(), &CycleStreams::new(4, 1)), Err(Error::Config(_))));
    }

    #[test]
    fn inflation_is_applied_then_updated() {
        let models = vec![model("a", 8.0, 10)];
        let mut state = MultiModelState::new(models, vec![ensemble(10, 5)], vec![ModelErrorState::zero(8)])
            .unwrap()
            .with_q_estimation(false)
            .with_inflation(Some(InflationState::new(1.5, 0.01).unwrap()));
        let out = state.assimilate(&obs(), FusionMethod::Method1, &CycleStreams::new(1, 0)).unwrap();
        assert_eq!(out.diagnostics.lambda_applied, 1.5);
        let est = out.diagnostics.lambda_estimate.unwrap();
        assert!((state.inflation.unwrap().lambda - (0.01 * est + 0.99 * 1.5)).abs() < 1e-12);
    }

    #[test]
    fn static_chain_requires_method1() {
        let models = vec![model("a", 8.0, 6), model("b", 9.0, 6)];
        let mut state =
            MultiModelState::new(models, vec![ensemble(6, 1), ensemble(6, 2)], vec![ModelErrorState::zero(8); 2]).unwrap();
        state.start_covariance_averaging();
        state.assimilate(&obs(), FusionMethod::Method1, &CycleStreams::new(1, 0)).unwrap();
        state.freeze_static_covariances().unwrap();
        assert!(state.assimilate(&obs(), FusionMethod::Method2, &CycleStreams::new(1, 1)).is_err());
        let out = state.assimilate(&obs(), FusionMethod::Method1, &CycleStreams::new(1, 2)).unwrap();
        assert_eq!(out.analysis.size(), 6);
    }

    #[test]
    fn divergence_guard() {
        let mut g = DivergenceGuard::new(1.0);
        for c in 0..49 {
            g.check(c, 20.0).unwrap();
        }
        g.check(49, 0.5).unwrap();
        for c in 50..99 {
            g.check(c, 20.0).unwrap();
        }
        assert_eq!(g.check(99, 20.0), Err(Error::Divergence { cycle: 99 }));
        assert!(DivergenceGuard::new(1.0).check(0, f64::NAN).is_err());
    }
}

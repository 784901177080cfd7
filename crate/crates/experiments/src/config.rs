//! Experiment configuration files (TOML, strict keys).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Assimilation,
    Forecast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Conventional,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    /// Same state space as the truth.
    #[default]
    Full,
    /// Only the large-scale variables of a two-scale truth.
    LargeScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Single,
    Mme,
    Method1,
    Method2,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QBasis {
    /// Closed form when every model variable is observed, blocks otherwise.
    #[default]
    Auto,
    Full,
    Blocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub cycles: usize,
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    #[serde(default)]
    pub variant: Variant,
    /// Forcing values, each covering an equal block of large-scale sites.
    pub forcing: Vec<f64>,
    /// Number of large-scale sites.
    pub sites: usize,
    /// Small-scale variables per site; 0 for the single-scale system.
    #[serde(default)]
    pub per_large: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_bc")]
    pub b: f64,
    #[serde(default = "default_bc")]
    pub c: f64,
    pub dt: f64,
    #[serde(default = "default_spinup")]
    pub spinup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    /// `R = r_scale·I`.
    #[serde(default)]
    pub r_scale: Option<f64>,
    /// `R` diagonal as this fraction of each variable class's climatological
    /// variance.
    #[serde(default)]
    pub climatological_fraction: Option<f64>,
    /// Observe state indices `i` with `i % every == offset`.
    #[serde(default = "one")]
    pub every: usize,
    #[serde(default)]
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub delta: f64,
    pub gamma: f64,
    #[serde(default = "one_f")]
    pub lambda_initial: f64,
    /// Initial `Q̃ = q_initial·I` for models without prescribed noise.
    pub q_initial: f64,
    #[serde(default = "yes")]
    pub estimate_q: bool,
    #[serde(default)]
    pub q_basis: QBasis,
    /// Sites per block in the block-diagonal `Q` basis.
    #[serde(default = "one")]
    pub q_block: usize,
    /// Variance of the initial member perturbations.
    pub initial_spread: f64,
    /// Gaspari–Cohn radius for large-scale variables; none disables localization.
    #[serde(default)]
    pub localization: Option<f64>,
    /// Radius for small-scale variables.
    #[serde(default)]
    pub localization_small: Option<f64>,
    /// Members of each single-model baseline; defaults to the model's own.
    #[serde(default)]
    pub single_members: Option<usize>,
    #[serde(default = "default_averaging")]
    pub static_averaging: usize,
    /// First cycle of the static covariance average; defaults to
    /// `burn_in − static_averaging`.
    #[serde(default)]
    pub static_start: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub members: usize,
    /// Forcing blocks; defaults to the truth forcing.
    #[serde(default)]
    pub forcing: Option<Vec<f64>>,
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub resolution: Resolution,
    /// Scale of the shared additive noise covariance from `[noise]`.
    #[serde(default)]
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub bandwidth: usize,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSpec {
    /// Leads are `1..=legs` windows.
    pub legs: usize,
    /// Observation error variance of the driving analysis.
    pub analysis_r: f64,
    #[serde(default = "yes")]
    pub one_shot: bool,
    /// Fusion methods that are also run recursively.
    #[serde(default)]
    pub recursive: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub window: f64,
    pub cycles: usize,
    pub burn_in: usize,
    #[serde(default)]
    pub quick: Option<Counts>,
    pub methods: Vec<Method>,
    /// Extra Method 1 runs with these fusion orders.
    #[serde(default)]
    pub orders: Vec<Vec<usize>>,
    pub truth: TruthSpec,
    pub observations: ObservationSpec,
    pub filter: FilterSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub forecast: Option<ForecastSpec>,
    pub models: Vec<ModelSpec>,
}

fn default_h() -> f64 {
    1.0
}
fn default_bc() -> f64 {
    10.0
}
fn default_spinup() -> f64 {
    1000.0
}
fn default_averaging() -> usize {
    100
}
fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Replaces the cycle counts with the `[quick]` ones, if present.
    pub fn quick(mut self) -> Self {
        if let Some(q) = self.quick.take() {
            self.cycles = q.cycles;
            self.burn_in = q.burn_in;
        }
        self
    }

    /// State dimension of the truth.
    pub fn truth_dim(&self) -> usize {
        self.truth.sites * (self.truth.per_large + 1)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.cycles <= self.burn_in {
            return Err(invalid(format!("cycles ({}) must exceed burn_in ({})", self.cycles, self.burn_in)));
        }
        if let Some(q) = &self.quick {
            if q.cycles <= q.burn_in {
                return Err(invalid("quick.cycles must exceed quick.burn_in"));
            }
        }
        let t = &self.truth;
        if !(t.dt > 0.0) || !(self.window > 0.0) {
            return Err(invalid("dt and window must be positive"));
        }
        let ratio = self.window / t.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(invalid(format!("window {} is not a multiple of dt {}", self.window, t.dt)));
        }
        if t.sites < 4 {
            return Err(invalid("truth needs at least 4 sites"));
        }
        check_forcing(&t.forcing, t.sites, "truth")?;
        let obs = &self.observations;
        if obs.every == 0 || obs.offset >= obs.every || obs.offset >= self.truth_dim() {
            return Err(invalid("observation mask is empty"));
        }
        match (obs.r_scale, obs.climatological_fraction) {
            (Some(r), None) if r > 0.0 => {}
            (None, Some(f)) if f > 0.0 => {}
            _ => return Err(invalid("set exactly one positive observations.r_scale or observations.climatological_fraction")),
        }
        let f = &self.filter;
        if !(f.delta > 0.0 && f.delta < 1.0) || !(f.gamma > 0.0 && f.gamma < 1.0) {
            return Err(invalid("filter.delta and filter.gamma must lie in (0, 1)"));
        }
        if f.q_initial < 0.0 || f.initial_spread < 0.0 || f.q_block == 0 {
            return Err(invalid("filter.q_initial and filter.initial_spread must be non-negative, q_block positive"));
        }
        if self.models.is_empty() {
            return Err(invalid("at least one [[models]] entry is required"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods is empty"));
        }
        for m in &self.models {
            if m.members < 2 {
                return Err(invalid(format!("model {}: needs at least 2 members", m.name)));
            }
            if let Some(forcing) = &m.forcing {
                check_forcing(forcing, t.sites, &m.name)?;
            }
            if m.resolution == Resolution::LargeScale && t.per_large == 0 {
                return Err(invalid(format!("model {}: large-scale resolution needs a two-scale truth", m.name)));
            }
            if m.noise_scale.is_some() && self.noise.is_none() {
                return Err(invalid(format!("model {}: noise_scale needs a [noise] section", m.name)));
            }
        }
        if self.models[0].resolution != Resolution::Full {
            return Err(invalid("the first model is the reference and must have full resolution"));
        }
        for order in &self.orders {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..self.models.len()).collect::<Vec<_>>() {
                return Err(invalid(format!("order {order:?} is not a permutation of the models")));
            }
            if self.models[order[0]].resolution != Resolution::Full {
                return Err(invalid(format!("order {order:?} starts with a reduced model")));
            }
        }
        if let Some(n) = &self.noise {
            if n.bandwidth > t.sites * (t.per_large + 1) {
                return Err(invalid("noise.bandwidth exceeds the state dimension"));
            }
        }
        match (self.kind, &self.forecast) {
            (ExperimentKind::Forecast, None) => return Err(invalid("forecast experiments need a [forecast] section")),
            (ExperimentKind::Forecast, Some(fc)) => {
                if fc.legs == 0 || !(fc.analysis_r > 0.0) {
                    return Err(invalid("forecast.legs must be positive and analysis_r > 0"));
                }
                if fc.recursive.iter().any(|m| !matches!(m, Method::Method1 | Method::Method2 | Method::Mme)) {
                    return Err(invalid("forecast.recursive accepts mme, method1 and method2"));
                }
                if self.methods.contains(&Method::Static) {
                    return Err(invalid("the static variant is an assimilation method"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn check_forcing(forcing: &[f64], sites: usize, who: &str) -> Result<(), HarnessError> {
    if forcing.is_empty() || sites % forcing.len() != 0 {
        return Err(invalid(format!(
            "{who}: {} forcing blocks do not divide {sites} sites",
            forcing.len()
        )));
    }
    Ok(())
}

/// Expands forcing blocks to one value per site.
pub fn forcing_profile(blocks: &[f64], sites: usize) -> Vec<f64> {
    let per = sites / blocks.len();
    (0..sites).map(|i| blocks[i / per]).collect()
}

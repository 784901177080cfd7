//! Twin experiments for the multi-model ensemble Kalman filter: truth and
//! observation generation, the single-model, MME and MM-EnKF runs, forecast
//! sweeps, metric records and the equivalence oracles.

pub mod assimilation;
pub mod config;
pub mod forecast;
pub mod oracle;
pub mod output;
pub mod setup;

pub use assimilation::run_twin_experiment;
pub use config::{ExperimentConfig, ExperimentKind, Method};
pub use forecast::run_forecast_experiment;
pub use output::{CycleRecord, Phase, Summary};

/// Harness failures, mapped to process exit codes by the CLI.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    /// A method failed during its cycle loop.
    #[error("{method} failed at cycle {cycle}: {source}")]
    Method {
        method: String,
        cycle: usize,
        #[source]
        source: mmkf_core::Error,
    },

    #[error("{0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] mmkf_core::Error),
}

fn core_exit_code(e: &mmkf_core::Error) -> i32 {
    match e.root() {
        mmkf_core::Error::Config(_) | mmkf_core::Error::InvalidInput(_) => 2,
        _ => 3,
    }
}

impl HarnessError {
    pub fn at(method: &str, cycle: usize, source: mmkf_core::Error) -> Self {
        HarnessError::Method {
            method: method.to_string(),
            cycle,
            source,
        }
    }

    /// 2 for configuration errors, 3 for divergence and other numerical
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Method { source, .. } | HarnessError::Core(source) => core_exit_code(source),
            HarnessError::Io(_) => 1,
        }
    }
}

/// Records and their summary from one experiment.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<CycleRecord>,
    pub summary: Summary,
}

/// Runs the experiment named by `config.kind`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    match config.kind {
        ExperimentKind::Assimilation => run_twin_experiment(config),
        ExperimentKind::Forecast => run_forecast_experiment(config),
    }
}

//! Multi-model ensemble Kalman filtering.
//!
//! The crate fuses forecasts from several imperfect models (each possibly
//! living in its own state space) with observations, using matrix-valued,
//! flow-dependent weights. The building blocks are:
//!
//! - [`linalg`]: symmetric square roots, pseudoinverses, PSD repair and
//!   Gaspari–Cohn localization.
//! - [`models`]: Lorenz96 dynamics (single and two-scale), RK4 integration
//!   and the maps between model spaces.
//! - [`filter`]: the left-multiplied ensemble square-root analysis and
//!   adaptive multiplicative inflation.
//! - [`model_error`]: innovation-based estimation of the model-error
//!   covariance `Q`.
//! - [`multimodel`]: direct and iterative fusion, the BLUE weights, and the
//!   two multi-model EnKF cycle variants plus multi-model forecasting.
//! - [`metrics`]: RMSE and CRPS.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the experiment
//! harness uses.

pub mod error;
pub mod filter;
pub mod linalg;
pub mod metrics;
pub mod model_error;
pub mod models;
pub mod multimodel;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use filter::{Ensemble, InflationState, Observation};
pub use linalg::localization::{CrossClassRule, LocalizationSpec, Site, VariableClass};
pub use model_error::ModelErrorState;
pub use models::{AdditiveNoise, LinearMap, ModelSystem};
pub use multimodel::{GaussianSummary, MultiModelState};
pub use scalar::Real;

/// Dense column-major matrix.
pub type Matrix<T> = nalgebra::DMatrix<T>;
/// Dense column vector.
pub type Vector<T> = nalgebra::DVector<T>;

pub type Ensemble64 = Ensemble<f64>;
pub type Observation64 = Observation<f64>;
pub type InflationState64 = InflationState<f64>;
pub type ModelErrorState64 = ModelErrorState<f64>;
pub type ModelSystem64 = ModelSystem<f64>;
pub type GaussianSummary64 = GaussianSummary<f64>;
pub type MultiModelState64 = MultiModelState<f64>;
pub type LocalizationSpec64 = LocalizationSpec<f64>;
pub type Matrix64 = Matrix<f64>;
pub type Vector64 = Vector<f64>;

pub type Ensemble32 = Ensemble<f32>;
pub type Matrix32 = Matrix<f32>;
pub type Vector32 = Vector<f32>;

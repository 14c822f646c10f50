//! Pavement maintenance decision engine.
//!
//! The crate turns raw road-survey data into a budget-feasible maintenance
//! plan in four stages:
//!
//! 1. **Forecast**: per-route disease forecasting with a from-scratch LSTM
//!    and condition-index regression on the forecasted diseases.
//! 2. **Route ranking**: distribution-based probability assignment over the
//!    predicted route conditions combined with segment-level maintenance
//!    likelihood from a Bayesian network.
//! 3. **Treatment recommendation**: a deep Q-network trained on a
//!    maintenance decision process (verified against value iteration).
//! 4. **Plan selection**: logistic scoring of every evaluation unit, ranked
//!    and cut to the configured budget.
//!
//! The numeric kernels are generic over [`scalar::Scalar`] (`f32`/`f64`);
//! the pipeline itself runs at `f64` (see the type aliases below).

#![forbid(unsafe_code)]

pub(crate) mod linalg;

pub mod bayesnet;
pub mod domain;
pub mod forecast;
pub mod pipeline;
pub mod priority;
pub mod recommend;
pub mod scalar;

pub use scalar::Scalar;

/// The forecasting model at the pipeline's working precision.
pub type TrainedLstmF64 = forecast::TrainedLstm<f64>;
/// Condition-index regression at the pipeline's working precision.
pub type MlrModelF64 = forecast::MlrModel<f64>;
/// Segment scoring model at the pipeline's working precision.
pub type LogisticModelF64 = priority::LogisticModel<f64>;
/// Treatment value network at the pipeline's working precision.
pub type QNetworkF64 = recommend::QNetwork<f64>;
/// Ranked, budget-cut segment list at the pipeline's working precision.
pub type PriorityListF64 = priority::PriorityList<f64>;
/// Route ranking entry at the pipeline's working precision.
pub type RoutePriorityF64 = priority::RoutePriority<f64>;

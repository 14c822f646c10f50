//! Route-condition forecasting: correlation-driven feature selection, a
//! from-scratch LSTM for multi-year disease forecasting, and a linear
//! regression mapping disease quantities to the pavement condition index.

use std::collections::BTreeMap;

use crate::domain::RouteSeries;

mod lstm;
mod mlr;
mod stats;

pub use lstm::{
    dense, forecast_diseases, lstm_step, make_windows, ssr_loss, ssr_loss_and_grads, train_lstm,
    HiddenChoice, LstmParams, LstmTrainConfig, MinMaxScaler, TrainedLstm, Window,
};
pub use mlr::{fit_mlr, predict_pci, MlrModel};
pub use stats::pearson;

#[derive(Debug, thiserror::Error)]
pub enum ForecastError {
    #[error("inputs have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} data points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("`{name}` has zero variance; correlation is undefined")]
    ZeroVariance { name: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("{rows} row(s) cannot fill a window of {window} plus a target row")]
    WindowTooLarge { rows: usize, window: usize },
    #[error("no features selected; nothing to train on")]
    EmptySelection,
    #[error("feature `{code}` missing from the series")]
    MissingFeature { code: String },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("regression needs more rows than features (rows {rows}, features {features})")]
    TooFewRows { rows: usize, features: usize },
    #[error("design matrix is rank-deficient at {column}; drop the collinear column")]
    RankDeficient { column: String },
    #[error("feature mismatch: {message}")]
    FeatureMismatch { message: String },
    #[error("forecast horizon must be at least 1")]
    ZeroHorizon,
    #[error("invalid configuration: {message}")]
    InvalidConfig { message: String },
    #[error("non-finite value in {place}")]
    NonFinite { place: String },
}

/// One disease code retained by feature selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFeature {
    pub code: String,
    /// Pearson correlation against the route's PCI series.
    pub correlation: f64,
}

/// Result of correlation-based feature selection for one route.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSelection {
    pub route_id: String,
    pub threshold: f64,
    /// Sorted by |correlation| descending, ties broken by code ascending.
    pub ranked: Vec<SelectedFeature>,
}

impl FeatureSelection {
    pub fn codes(&self) -> Vec<String> {
        self.ranked.iter().map(|f| f.code.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Keeps the disease codes whose absolute correlation with the PCI series
/// meets `threshold` (inclusive). Zero-variance disease series carry no
/// signal and are skipped; a zero-variance PCI series is an error because no
/// correlation is defined at all.
pub fn select_features(
    series: &RouteSeries,
    threshold: f64,
) -> Result<FeatureSelection, ForecastError> {
    if series.len() < 2 {
        return Err(ForecastError::TooFewPoints {
            needed: 2,
            got: series.len(),
        });
    }
    let pci_varies = series.pci.iter().any(|v| *v != series.pci[0]);
    if !pci_varies {
        return Err(ForecastError::ZeroVariance { name: "pci".into() });
    }

    let mut ranked = Vec::new();
    for (code, values) in &series.diseases {
        match pearson(values, &series.pci) {
            Ok(r) => {
                if r.abs() >= threshold {
                    ranked.push(SelectedFeature {
                        code: code.clone(),
                        correlation: r,
                    });
                }
            }
            Err(ForecastError::ZeroVariance { .. }) => continue,
            Err(other) => return Err(other),
        }
    }
    ranked.sort_by(|a, b| {
        b.correlation
            .abs()
            .total_cmp(&a.correlation.abs())
            .then_with(|| a.code.cmp(&b.code))
    });
    Ok(FeatureSelection {
        route_id: series.route_id.clone(),
        threshold,
        ranked,
    })
}

/// Multi-year forecast for one route: disease quantities from the LSTM and
/// the condition index regressed from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub route_id: String,
    /// Last year the models saw; forecasts start the year after.
    pub base_year: i32,
    /// `base_year + 1 ..= base_year + horizon`.
    pub years: Vec<i32>,
    pub diseases: BTreeMap<String, Vec<f64>>,
    /// Condition index per forecast year, clamped to 0..=100.
    pub pci: Vec<f64>,
}

impl Forecast {
    pub fn horizon(&self) -> usize {
        self.years.len()
    }

    /// Predicted condition for the first forecast year.
    pub fn next_year_pci(&self) -> f64 {
        self.pci[0]
    }
}

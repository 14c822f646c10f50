//! Road-network domain model: detection and maintenance records, route
//! metadata, aggregated per-route time series, and the supporting data
//! hygiene (validation, evaluation-unit re-bucketing, quantile binning).

use std::collections::BTreeMap;

mod io;
mod series;
mod validate;

pub use io::{
    load_detection, load_maintenance, load_route_meta, write_detection, write_maintenance,
    write_route_meta, DetectionFile, MaintenanceFile,
};
pub use series::{build_series, to_evaluation_units, EVALUATION_UNIT_M};
pub use validate::{validate, ValidationIssue, ValidationReport};

/// Errors raised while loading or aggregating input data. Messages carry the
/// file, row and column so a bad cell can be found without a debugger.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{row}: {message}")]
    Malformed {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}:{row}: column `{column}`: {message}")]
    BadField {
        path: String,
        row: usize,
        column: String,
        message: String,
    },
    #[error("route {route_id} has {years} detection year(s); at least two are required")]
    InsufficientYears { route_id: String, years: usize },
    #[error("route {route_id} not present in detection data")]
    UnknownRoute { route_id: String },
}

/// Traffic volume class from the route register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TrafficVolume {
    High,
    Medium,
    Low,
}

impl TrafficVolume {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "H" => Some(TrafficVolume::High),
            "M" => Some(TrafficVolume::Medium),
            "L" => Some(TrafficVolume::Low),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrafficVolume::High => "H",
            TrafficVolume::Medium => "M",
            TrafficVolume::Low => "L",
        }
    }
}

/// Static register entry for one route.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteMeta {
    pub route_id: String,
    pub road_grade: String,
    pub pavement_type: String,
    pub base_type: String,
    pub traffic_volume: TrafficVolume,
    pub department: String,
    pub unit: String,
    pub area: String,
    pub special_section: bool,
    pub admin_grade: String,
}

/// One detection row: the condition index and per-disease quantities measured
/// on a segment of a route in a given year.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub route_id: String,
    pub segment_start_m: f64,
    pub segment_end_m: f64,
    pub year: i32,
    /// Pavement condition index, 0..=100.
    pub pci: f64,
    /// Disease code -> measured quantity (non-negative, zero when absent).
    pub diseases: BTreeMap<String, f64>,
}

impl DetectionRecord {
    pub fn length_m(&self) -> f64 {
        self.segment_end_m - self.segment_start_m
    }
}

/// One historical maintenance event on a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct MaintenanceRecord {
    pub route_id: String,
    pub segment_start_m: f64,
    pub segment_end_m: f64,
    pub year: i32,
    pub treatment_code: String,
    pub measure: String,
    pub location: String,
    pub cost_per_km: f64,
    pub pre_pci: f64,
    pub post_pci: f64,
    /// Condition one year after treatment, when a later survey exists.
    pub next_year_pci: Option<f64>,
}

/// Route-level yearly series: length-weighted mean condition and summed
/// disease quantities, with interior gaps linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSeries {
    pub route_id: String,
    /// Strictly increasing, contiguous years.
    pub years: Vec<i32>,
    pub pci: Vec<f64>,
    /// Disease code -> per-year summed quantity, same length as `years`.
    pub diseases: BTreeMap<String, Vec<f64>>,
}

impl RouteSeries {
    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }
}

/// Identity of one evaluation unit (metre span on a route). Boundaries are
/// integral metres because units live on the 10 m grid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentId {
    pub route_id: String,
    pub start_m: i64,
    pub end_m: i64,
}

impl SegmentId {
    pub fn length_km(&self) -> f64 {
        (self.end_m - self.start_m) as f64 / 1000.0
    }
}

impl std::fmt::Display for SegmentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{}..{}]", self.route_id, self.start_m, self.end_m)
    }
}

/// Budget constraint applied to the final segment selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    /// Non-negative; `f64::INFINITY` means unconstrained.
    pub amount: f64,
    pub scope: BudgetScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetScope {
    /// One pot shared by the whole network.
    Network,
    /// The amount applies to each route separately.
    PerRoute,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            amount: f64::INFINITY,
            scope: BudgetScope::Network,
        }
    }
}

/// Quantile-based binning of a continuous quantity into labelled categories
/// (quartiles for disease degree, terciles for cost bands).
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    /// Upper edges of all bins but the last, ascending.
    edges: Vec<f64>,
    labels: Vec<String>,
}

impl Discretizer {
    /// Builds `bins` quantile bins from the samples; labels are
    /// `{prefix}1..{prefix}{bins}`. Returns `None` for an empty sample set.
    pub fn from_quantiles(samples: &[f64], bins: usize, prefix: &str) -> Option<Self> {
        if samples.is_empty() || bins == 0 {
            return None;
        }
        let mut sorted: Vec<f64> = samples.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let edges = (1..bins)
            .map(|i| quantile(&sorted, i as f64 / bins as f64))
            .collect();
        let labels = (1..=bins).map(|i| format!("{prefix}{i}")).collect();
        Some(Discretizer { edges, labels })
    }

    pub fn label(&self, value: f64) -> &str {
        for (i, edge) in self.edges.iter().enumerate() {
            if value <= *edge {
                return &self.labels[i];
            }
        }
        self.labels.last().expect("at least one bin")
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Linear-interpolation quantile (the common "R-7" rule) of pre-sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Condition-index band of width 10 (0..=9); band 9 covers 90..=100.
pub fn pci_band(pci: f64) -> usize {
    if pci <= 0.0 {
        return 0;
    }
    ((pci / 10.0).floor() as usize).min(9)
}

/// Stable label for a condition band, used as a categorical node value.
pub fn pci_band_label(band: usize) -> String {
    format!("B{band}")
}

/// All band labels in order, for declaring categorical domains.
pub fn pci_band_domain() -> Vec<String> {
    (0..10).map(pci_band_label).collect()
}

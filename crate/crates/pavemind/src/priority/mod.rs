//! Maintenance prioritization: distribution-based route ranking, a segment
//! maintenance-likelihood network, logistic scoring, and budget-constrained
//! list selection.

use crate::bayesnet::BayesError;
use crate::domain::{Budget, SegmentId};
use crate::scalar::Scalar;

mod bo;
mod logistic;
mod segnet;

pub use bo::{bayes_opt, BayesOptConfig, BayesOptResult};
pub use logistic::{fit_logistic, LogisticConfig, LogisticModel};
pub use segnet::{
    encode_features, learn_maintenance_net, maintenance_net_structure, segment_maintenance_prob,
    FeatureVocab, MaintenanceNet, SegmentFeatures, FACTOR_NAMES, TARGET_NODE,
};

#[derive(Debug, thiserror::Error)]
pub enum PriorityError {
    #[error("no values to rank")]
    Empty,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("{place} must be a probability in [0, 1], got {value}")]
    BadProbability { place: String, value: f64 },
    #[error("feature rows have inconsistent widths (expected {expected}, got {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lengths differ: {left} feature rows vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("need both classes to fit, every example is `{class}`")]
    SingleClass { class: String },
    #[error("invalid configuration: {message}")]
    InvalidConfig { message: String },
    #[error("search space is empty")]
    EmptySpace,
    #[error("bad bounds at dimension {dim}: [{lo}, {hi}]")]
    BadBounds { dim: usize, lo: f64, hi: f64 },
    #[error("objective returned a non-finite value at evaluation {index}")]
    BadObjective { index: usize },
    #[error("segment cost must be finite and non-negative, got {cost}")]
    BadCost { cost: f64 },
    #[error("factor `{factor}` has no value `{value}` in the vocabulary")]
    UnknownFactorValue { factor: String, value: String },
    #[error(transparent)]
    Net(#[from] BayesError),
}

/// Distribution-based probability per data point.
///
/// The values are ranked ascending and mapped through the empirical min-max
/// CDF; the lowest point receives `1 - (CDF - 0)` and every later point
/// `1 - (CDF(x) - CDF(previous))`, so a route in poor condition (low value)
/// gets a probability near 1 and the increments over the whole list telescope
/// back to the CDF itself. Results come back in input order. When all values
/// are equal the minimum rule applies to every point and each gets 1.
pub fn assign_probabilities<S: Scalar>(values: &[S]) -> Result<Vec<S>, PriorityError> {
    if values.is_empty() {
        return Err(PriorityError::Empty);
    }
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(PriorityError::NonFinite { index });
        }
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let min = values[order[0]];
    let max = values[*order.last().expect("non-empty")];
    let mut out = vec![S::one(); values.len()];
    if max == min {
        return Ok(out);
    }
    let range = max - min;
    let mut prev_cdf = S::zero();
    for &idx in &order {
        let cdf = (values[idx] - min) / range;
        out[idx] = S::one() - (cdf - prev_cdf);
        prev_cdf = cdf;
    }
    Ok(out)
}

/// Rank product for one route: `p_route * (1 - p_segment_assign)`.
///
/// High need (p_route near 1) combined with little existing maintenance
/// coverage (p_segment_assign near 0) yields the largest priority.
pub fn route_priority<S: Scalar>(p_route: S, p_segment_assign: S) -> S {
    debug_assert!(p_route >= S::zero() && p_route <= S::one());
    debug_assert!(p_segment_assign >= S::zero() && p_segment_assign <= S::one());
    p_route * (S::one() - p_segment_assign)
}

/// A route's composite rank entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePriority<S: Scalar> {
    pub route_id: String,
    pub predicted_pci: S,
    pub p_route: S,
    pub p_segment_assign: S,
    pub priority: S,
}

/// Ranks routes by [`route_priority`], with `p_route` assigned from the
/// distribution of predicted condition values across all routes. Sorted by
/// priority descending, ties broken by route id ascending.
pub fn rank_routes<S: Scalar>(
    entries: &[(String, S, S)],
) -> Result<Vec<RoutePriority<S>>, PriorityError> {
    let values: Vec<S> = entries.iter().map(|(_, pci, _)| *pci).collect();
    let p_routes = assign_probabilities(&values)?;
    let mut out = Vec::with_capacity(entries.len());
    for ((route_id, predicted_pci, p_seg), p_route) in entries.iter().zip(p_routes) {
        let p = p_seg.as_f64();
        if !(0.0..=1.0).contains(&p) {
            return Err(PriorityError::BadProbability {
                place: format!("segment-assignment probability of `{route_id}`"),
                value: p,
            });
        }
        out.push(RoutePriority {
            route_id: route_id.clone(),
            predicted_pci: *predicted_pci,
            p_route,
            p_segment_assign: *p_seg,
            priority: route_priority(p_route, *p_seg),
        });
    }
    out.sort_by(|a, b| {
        b.priority
            .partial_cmp(&a.priority)
            .expect("finite")
            .then_with(|| a.route_id.cmp(&b.route_id))
    });
    Ok(out)
}

/// One scored segment in a [`PriorityList`].
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSegment<S: Scalar> {
    pub segment: SegmentId,
    pub score: S,
    pub cost: f64,
    pub cumulative_cost: f64,
}

/// Segments ordered by score with a budget-feasible prefix marked.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityList<S: Scalar> {
    pub entries: Vec<RankedSegment<S>>,
    /// Length of the longest prefix whose cumulative cost fits the budget.
    pub selected_prefix_len: usize,
}

impl<S: Scalar> PriorityList<S> {
    pub fn selected(&self) -> &[RankedSegment<S>] {
        &self.entries[..self.selected_prefix_len]
    }
}

/// Scores every segment with the logistic model, sorts descending (ties by
/// segment id ascending), and selects the longest prefix that fits the
/// budget. The full ordering is always emitted; the budget only moves the
/// cut. The budget is applied to this list as a whole, so per-route scopes
/// are handled by ranking each route's segments separately.
pub fn priority_list<S: Scalar>(
    segments: &[(SegmentId, Vec<S>, f64)],
    model: &LogisticModel<S>,
    budget: &Budget,
) -> Result<PriorityList<S>, PriorityError> {
    let mut scored = Vec::with_capacity(segments.len());
    for (segment, features, cost) in segments {
        if !(cost.is_finite() && *cost >= 0.0) {
            return Err(PriorityError::BadCost { cost: *cost });
        }
        scored.push((segment.clone(), model.score(features)?, *cost));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite scores")
            .then_with(|| a.0.cmp(&b.0))
    });

    let mut entries = Vec::with_capacity(scored.len());
    let mut cumulative = 0.0f64;
    let mut selected_prefix_len = 0usize;
    let mut still_fits = true;
    for (rank, (segment, score, cost)) in scored.into_iter().enumerate() {
        cumulative += cost;
        if still_fits && cumulative <= budget.amount {
            selected_prefix_len = rank + 1;
        } else {
            still_fits = false;
        }
        entries.push(RankedSegment {
            segment,
            score,
            cost,
            cumulative_cost: cumulative,
        });
    }
    Ok(PriorityList {
        entries,
        selected_prefix_len,
    })
}

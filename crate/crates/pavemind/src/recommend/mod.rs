//! Treatment recommendation as a finite-horizon decision process.
//!
//! The pieces, in the order the pipeline uses them: an action set distilled
//! from maintenance history ([`action_set`]), a reward balancing treatment
//! cost against predicted condition ([`reward`]), learned conditional
//! networks for measure / location / treatment ([`DecisionNets`]), an
//! effectiveness model turning a treatment into a distribution over condition
//! gains ([`EffectivenessTable`] + [`transition`]), an exact value-iteration
//! solver for small state spaces ([`value_iteration`]), and a deep Q-network
//! agent ([`dqn_train`]) whose greedy policy produces the final plan
//! ([`greedy_plan`]).

mod dqn;
mod mdp;
mod nets;

pub use dqn::{
    dqn_train, greedy_plan, DqnConfig, DqnResult, Environment, NetworkEnv, PlanEntry, QNetwork,
    StepOutcome, TabularEnv,
};
pub use mdp::{value_iteration, TabularMdp, ValueIteration};
pub use nets::{
    learn_decision_nets, location_prob, measure_prob, reachable_states, transition,
    treatment_prob, DecisionExample, DecisionNet, DecisionNets, EffectivenessTable, StateEncoder,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bayesnet::BayesError;
use crate::domain::{pci_band, pci_band_label, MaintenanceRecord, SegmentId};

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("no samples to average")]
    EmptySamples,
    #[error("sample {index} has a non-positive starting index value")]
    NonPositiveIndex { index: usize },
    #[error("maintained mileage {maintained} exceeds network mileage {network}")]
    MileageExceeded { maintained: f64, network: f64 },
    #[error("network mileage must be positive, got {network}")]
    BadNetworkMileage { network: f64 },
    #[error("outcome probabilities sum to {sum}, not 1")]
    Unnormalized { sum: f64 },
    #[error("discount factor must lie in [0, 1), got {gamma}")]
    BadDiscount { gamma: f64 },
    #[error("{place} must not be empty")]
    Empty { place: &'static str },
    #[error("no maintenance history for treatment {code}")]
    UnknownTreatment { code: String },
    #[error("factor {factor} has no category for value {value}")]
    UnknownFactorValue { factor: String, value: String },
    #[error("no forecast available for route {route_id}")]
    MissingForecast { route_id: String },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid configuration: {message}")]
    InvalidConfig { message: String },
    #[error("state {state}, action {action}: transition probabilities sum to {sum}")]
    BadTransition {
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error(transparent)]
    Net(#[from] BayesError),
}

/// Code reserved for the do-nothing action present in every action set.
pub const NO_ACTION_CODE: &str = "NONE";

/// One maintenance policy the agent can pick: a historical treatment code
/// together with the averages that drive its reward, or the distinguished
/// do-nothing action.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentAction {
    pub code: String,
    pub measure: String,
    pub location: String,
    /// Mean cost per kilometre over the history rows carrying this code.
    pub cost_per_km: f64,
    /// Mean relative one-year condition decay observed after this treatment.
    pub attenuation: f64,
}

impl TreatmentAction {
    pub fn no_action() -> Self {
        TreatmentAction {
            code: NO_ACTION_CODE.to_string(),
            measure: NO_ACTION_CODE.to_string(),
            location: NO_ACTION_CODE.to_string(),
            cost_per_km: 0.0,
            attenuation: 0.0,
        }
    }

    pub fn is_no_action(&self) -> bool {
        self.code == NO_ACTION_CODE
    }
}

/// State of one segment as the agent sees it: current and predicted
/// condition plus the categorical context the decision networks condition on.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    pub segment: SegmentId,
    pub pci: f64,
    /// Width-10 bin of `pci`; kept consistent by [`MdpState::new`].
    pub pci_band: usize,
    pub predicted_next_pci: f64,
    /// Whether the segment was treated in recent history ("yes" / "no").
    pub htr: String,
    pub pt: String,
    pub bt: String,
    /// Condition band label, derived from `pci`.
    pub pi: String,
    pub dd: String,
    pub sd: String,
    /// Cost band of the segment's latest treatment, or "none".
    pub co: String,
    pub year: i32,
}

/// Categorical context for a new state; condition fields live in
/// [`MdpState::new`] arguments so the band stays derived, never hand-set.
#[derive(Debug, Clone, PartialEq)]
pub struct StateContext {
    pub htr: String,
    pub pt: String,
    pub bt: String,
    pub dd: String,
    pub sd: String,
    pub co: String,
}

impl MdpState {
    pub fn new(
        segment: SegmentId,
        pci: f64,
        predicted_next_pci: f64,
        context: StateContext,
        year: i32,
    ) -> Self {
        let band = pci_band(pci);
        MdpState {
            segment,
            pci,
            pci_band: band,
            predicted_next_pci,
            htr: context.htr,
            pt: context.pt,
            bt: context.bt,
            pi: pci_band_label(band),
            dd: context.dd,
            sd: context.sd,
            co: context.co,
            year,
        }
    }

    /// The categorical factors in encoding order.
    pub fn factor_pairs(&self) -> [(&'static str, &str); 7] {
        [
            ("htr", &self.htr),
            ("pt", &self.pt),
            ("bt", &self.bt),
            ("pi", &self.pi),
            ("dd", &self.dd),
            ("sd", &self.sd),
            ("co", &self.co),
        ]
    }

    fn context(&self) -> StateContext {
        StateContext {
            htr: self.htr.clone(),
            pt: self.pt.clone(),
            bt: self.bt.clone(),
            dd: self.dd.clone(),
            sd: self.sd.clone(),
            co: self.co.clone(),
        }
    }
}

/// Mean relative one-year decay of a performance index after a treatment:
/// the average of `(before - after) / before` over the samples.
pub fn attenuation_rate(samples: &[(f64, f64)]) -> Result<f64, RecommendError> {
    if samples.is_empty() {
        return Err(RecommendError::EmptySamples);
    }
    let mut total = 0.0;
    for (index, &(start, next)) in samples.iter().enumerate() {
        if start <= 0.0 {
            return Err(RecommendError::NonPositiveIndex { index });
        }
        total += (start - next) / start;
    }
    Ok(total / samples.len() as f64)
}

/// Reward for treating `maintained_km` of a `network_km` network at unit cost
/// `cost` with decay rate `lambda`, when next year's predicted condition is
/// `predicted_pci`:
///
/// ```text
/// R = (1 - d/D) * C + lambda * C - Y
/// ```
///
/// Note the cost enters positively, so pricier treatments raise the reward;
/// kept as stated even though the sign is debatable.
pub fn reward(
    maintained_km: f64,
    network_km: f64,
    cost: f64,
    lambda: f64,
    predicted_pci: f64,
) -> Result<f64, RecommendError> {
    if network_km <= 0.0 {
        return Err(RecommendError::BadNetworkMileage {
            network: network_km,
        });
    }
    if maintained_km < 0.0 || maintained_km > network_km {
        return Err(RecommendError::MileageExceeded {
            maintained: maintained_km,
            network: network_km,
        });
    }
    Ok((1.0 - maintained_km / network_km) * cost + lambda * cost - predicted_pci)
}

/// Probability-weighted utility of a set of exhaustive, mutually exclusive
/// outcomes. The probabilities must sum to 1 within 1e-9.
pub fn expected_utility(outcomes: &[(f64, f64)]) -> Result<f64, RecommendError> {
    let sum: f64 = outcomes.iter().map(|(p, _)| p).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(RecommendError::Unnormalized { sum });
    }
    Ok(outcomes.iter().map(|(p, u)| p * u).sum())
}

/// Distils the action set from maintenance history: one action per distinct
/// treatment code (cost and attenuation averaged over its rows, measure and
/// location by majority) plus [`TreatmentAction::no_action`] at index 0.
///
/// Attenuation uses rows that have a next-year condition reading; codes
/// without any default to 0 (no decay evidence).
pub fn action_set(records: &[MaintenanceRecord]) -> Result<Vec<TreatmentAction>, RecommendError> {
    if records.is_empty() {
        return Err(RecommendError::Empty {
            place: "maintenance history",
        });
    }
    let mut by_code: BTreeMap<&str, Vec<&MaintenanceRecord>> = BTreeMap::new();
    for rec in records {
        by_code.entry(&rec.treatment_code).or_default().push(rec);
    }
    let mut actions = vec![TreatmentAction::no_action()];
    for (code, rows) in by_code {
        let cost = rows.iter().map(|r| r.cost_per_km).sum::<f64>() / rows.len() as f64;
        let decay_samples: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.next_year_pci.map(|next| (r.post_pci, next)))
            .collect();
        let attenuation = if decay_samples.is_empty() {
            0.0
        } else {
            attenuation_rate(&decay_samples)?
        };
        actions.push(TreatmentAction {
            code: code.to_string(),
            measure: majority(rows.iter().map(|r| r.measure.as_str())),
            location: majority(rows.iter().map(|r| r.location.as_str())),
            cost_per_km: cost,
            attenuation,
        });
    }
    Ok(actions)
}

/// Most frequent value, ties broken lexicographically.
fn majority<'a>(values: impl Iterator<Item = &'a str>) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        .map(|(v, _)| v.to_string())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(code: &str, cost: f64, post: f64, next: Option<f64>) -> MaintenanceRecord {
        MaintenanceRecord {
            route_id: "A000".to_string(),
            segment_start_m: 0.0,
            segment_end_m: 1000.0,
            year: 2019,
            treatment_code: code.to_string(),
            measure: "patch".to_string(),
            location: "surface".to_string(),
            cost_per_km: cost,
            pre_pci: 60.0,
            post_pci: post,
            next_year_pci: next,
        }
    }

    #[test]
    fn no_decay_gives_zero_attenuation() {
        assert_eq!(attenuation_rate(&[(80.0, 80.0)]).unwrap(), 0.0);
    }

    #[test]
    fn single_sample_attenuation_is_the_relative_drop() {
        let rate = attenuation_rate(&[(80.0, 72.0)]).unwrap();
        assert!((rate - 0.1).abs() < 1e-12);
    }

    #[test]
    fn attenuation_averages_over_samples() {
        let rate = attenuation_rate(&[(100.0, 90.0), (50.0, 45.0)]).unwrap();
        assert!((rate - 0.1).abs() < 1e-12);
    }

    #[test]
    fn attenuation_rejects_empty_and_non_positive_start() {
        assert!(matches!(
            attenuation_rate(&[]),
            Err(RecommendError::EmptySamples)
        ));
        let err = attenuation_rate(&[(80.0, 72.0), (0.0, 5.0)]).unwrap_err();
        assert!(matches!(
            err,
            RecommendError::NonPositiveIndex { index: 1 }
        ));
    }

    #[test]
    fn reward_with_full_coverage_and_no_decay_is_minus_prediction() {
        let r = reward(100.0, 100.0, 37.5, 0.0, 42.0).unwrap();
        assert_eq!(r, -42.0);
    }

    #[test]
    fn reward_matches_hand_computation() {
        // 0.9 * 50 + 0.1 * 50 - 73.67 = 45 + 5 - 73.67.
        let r = reward(10.0, 100.0, 50.0, 0.1, 73.67).unwrap();
        assert!((r - -23.67).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_reduces_reward_to_minus_prediction() {
        let r = reward(10.0, 100.0, 0.0, 0.3, 55.0).unwrap();
        assert_eq!(r, -55.0);
    }

    #[test]
    fn reward_rejects_bad_mileage() {
        assert!(matches!(
            reward(1.0, 0.0, 5.0, 0.1, 50.0),
            Err(RecommendError::BadNetworkMileage { .. })
        ));
        assert!(matches!(
            reward(11.0, 10.0, 5.0, 0.1, 50.0),
            Err(RecommendError::MileageExceeded { .. })
        ));
    }

    #[test]
    fn reward_is_affine_in_cost_with_the_stated_slope() {
        let (d, total, lambda, y) = (25.0, 200.0, 0.07, 61.0);
        let r1 = reward(d, total, 40.0, lambda, y).unwrap();
        let r2 = reward(d, total, 90.0, lambda, y).unwrap();
        let slope = (r2 - r1) / 50.0;
        assert!((slope - (1.0 - d / total + lambda)).abs() < 1e-12);

        // One point more of predicted condition costs exactly one reward unit.
        let r3 = reward(d, total, 40.0, lambda, y + 1.0).unwrap();
        assert!((r3 - (r1 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn expected_utility_weighs_outcomes() {
        assert_eq!(expected_utility(&[(0.5, 10.0), (0.5, 0.0)]).unwrap(), 5.0);
        assert_eq!(expected_utility(&[(1.0, 7.25)]).unwrap(), 7.25);
        let eu = expected_utility(&[(0.2, 1.0), (0.3, 2.0), (0.5, 4.0)]).unwrap();
        assert!((eu - 2.8).abs() < 1e-12);
    }

    #[test]
    fn expected_utility_rejects_unnormalized_outcomes() {
        assert!(matches!(
            expected_utility(&[(0.4, 1.0), (0.4, 2.0)]),
            Err(RecommendError::Unnormalized { .. })
        ));
        assert!(matches!(
            expected_utility(&[]),
            Err(RecommendError::Unnormalized { .. })
        ));
    }

    #[test]
    fn expected_utility_is_linear_in_mixtures() {
        let a = [(0.5, 10.0), (0.5, 0.0)];
        let b = [(0.2, 1.0), (0.8, -3.0)];
        let t = 0.3;
        let mixed: Vec<(f64, f64)> = a
            .iter()
            .map(|&(p, u)| (t * p, u))
            .chain(b.iter().map(|&(p, u)| ((1.0 - t) * p, u)))
            .collect();
        let lhs = expected_utility(&mixed).unwrap();
        let rhs =
            t * expected_utility(&a).unwrap() + (1.0 - t) * expected_utility(&b).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn action_set_lists_no_action_first_then_codes() {
        let records = vec![
            record("B2", 120.0, 85.0, Some(76.5)),
            record("A1", 100.0, 80.0, Some(72.0)),
            record("A1", 140.0, 90.0, None),
        ];
        let actions = action_set(&records).unwrap();
        assert_eq!(actions.len(), 3);
        assert!(actions[0].is_no_action());
        assert_eq!(actions[0].cost_per_km, 0.0);
        assert_eq!(actions[1].code, "A1");
        assert_eq!(actions[2].code, "B2");

        // A1: mean cost of 100 and 140; decay from the single row with a
        // follow-up reading, (80 - 72) / 80.
        assert!((actions[1].cost_per_km - 120.0).abs() < 1e-12);
        assert!((actions[1].attenuation - 0.1).abs() < 1e-12);
        assert!((actions[2].attenuation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn action_set_defaults_attenuation_without_follow_ups() {
        let records = vec![record("C9", 75.0, 88.0, None)];
        let actions = action_set(&records).unwrap();
        assert_eq!(actions[1].attenuation, 0.0);
    }

    #[test]
    fn action_set_rejects_empty_history() {
        assert!(matches!(
            action_set(&[]),
            Err(RecommendError::Empty { .. })
        ));
    }

    #[test]
    fn state_constructor_keeps_band_consistent() {
        let seg = SegmentId {
            route_id: "A000".to_string(),
            start_m: 0,
            end_m: 30,
        };
        let ctx = StateContext {
            htr: "no".to_string(),
            pt: "asphalt".to_string(),
            bt: "gravel".to_string(),
            dd: "D1".to_string(),
            sd: "S1".to_string(),
            co: "none".to_string(),
        };
        let state = MdpState::new(seg, 73.67, 70.2, ctx, 2020);
        assert_eq!(state.pci_band, 7);
        assert_eq!(state.pi, "B7");
    }
}

//! Learned conditional models behind the decision process: which measure
//! fits a segment, where it applies, which treatment implements it, and how
//! effective a treatment tends to be.
//!
//! The three categorical questions are answered by small naive-Bayes stars
//! (target node as sole parent of each evidence factor), learned from
//! maintenance history. Effectiveness is a per-treatment distribution over
//! condition-gain bands, and [`transition`] combines it with a condition
//! forecast into a next-state distribution.

use std::collections::BTreeMap;

use super::{MdpState, RecommendError, TreatmentAction};
use crate::bayesnet::{learn_cpts, query, Cpt, Dag, NodeSpec, Query, Record};
use crate::domain::MaintenanceRecord;
use crate::forecast::Forecast;
use crate::Scalar;

/// Factors a measure is conditioned on.
const MEASURE_EVIDENCE: [&str; 5] = ["htr", "pt", "bt", "pi", "dd"];
/// Factors a location is conditioned on.
const LOCATION_EVIDENCE: [&str; 2] = ["dd", "sd"];
/// Factors a treatment is conditioned on.
const TREATMENT_EVIDENCE: [&str; 3] = ["location", "measure", "co"];

/// One maintenance event with the segment context present when it was
/// decided; the training row for all three decision networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionExample {
    pub measure: String,
    pub location: String,
    pub treatment: String,
    /// Treated in recent history ("yes" / "no").
    pub htr: String,
    pub pt: String,
    pub bt: String,
    /// Condition band label at decision time.
    pub pi: String,
    pub dd: String,
    pub sd: String,
    /// Cost band of the treatment.
    pub co: String,
}

impl DecisionExample {
    fn value(&self, name: &str) -> &str {
        match name {
            "measure" => &self.measure,
            "location" => &self.location,
            "treatment" => &self.treatment,
            "htr" => &self.htr,
            "pt" => &self.pt,
            "bt" => &self.bt,
            "pi" => &self.pi,
            "dd" => &self.dd,
            "sd" => &self.sd,
            "co" => &self.co,
            _ => unreachable!("fixed factor set"),
        }
    }
}

/// One learned question: a target domain plus, when the history shows at
/// least two target categories, a star-shaped network over the evidence.
#[derive(Debug, Clone)]
pub struct DecisionNet {
    target: &'static str,
    evidence: &'static [&'static str],
    domain: Vec<String>,
    /// Observed categories per evidence factor, in `evidence` order.
    evidence_domains: Vec<Vec<String>>,
    /// Single-label domains need no model; the answer is always that label.
    model: Option<(Dag, Vec<Cpt>)>,
}

impl DecisionNet {
    fn learn(
        target: &'static str,
        evidence: &'static [&'static str],
        examples: &[DecisionExample],
        alpha: f64,
    ) -> Result<Self, RecommendError> {
        let domain = observed_labels(examples, target);
        let evidence_domains: Vec<Vec<String>> = evidence
            .iter()
            .map(|f| observed_labels(examples, f))
            .collect();
        if domain.len() < 2 {
            return Ok(DecisionNet {
                target,
                evidence,
                domain,
                evidence_domains,
                model: None,
            });
        }
        let domain_refs: Vec<&str> = domain.iter().map(String::as_str).collect();
        let mut nodes = vec![NodeSpec::new(target, &domain_refs)];
        let mut kept = Vec::new();
        for (&factor, labels) in evidence.iter().zip(&evidence_domains) {
            if labels.len() >= 2 {
                let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
                nodes.push(NodeSpec::new(factor, &refs));
                kept.push(factor);
            }
        }
        let mut dag = Dag::new(nodes)?;
        for factor in &kept {
            dag.add_edge(target, factor)?;
        }
        let records: Vec<Record> = examples
            .iter()
            .map(|ex| {
                let mut row = Record::new();
                row.insert(target.to_string(), ex.value(target).to_string());
                for factor in &kept {
                    row.insert(factor.to_string(), ex.value(factor).to_string());
                }
                row
            })
            .collect();
        let cpts = learn_cpts(&dag, &records, alpha)?;
        Ok(DecisionNet {
            target,
            evidence,
            domain,
            evidence_domains,
            model: Some((dag, cpts)),
        })
    }

    /// Target categories, sorted; the order of every returned distribution.
    pub fn domain(&self) -> &[String] {
        &self.domain
    }

    /// Posterior over the target given one value per evidence factor, in the
    /// order the net was declared with. Values must be observed categories,
    /// including for factors the star dropped as single-label.
    fn posterior(&self, values: &[&str]) -> Result<Vec<(String, f64)>, RecommendError> {
        debug_assert_eq!(values.len(), self.evidence.len());
        for ((&factor, labels), &value) in
            self.evidence.iter().zip(&self.evidence_domains).zip(values)
        {
            if !labels.iter().any(|l| l == value) {
                return Err(RecommendError::UnknownFactorValue {
                    factor: factor.to_string(),
                    value: value.to_string(),
                });
            }
        }
        let Some((dag, cpts)) = &self.model else {
            return Ok(self.domain.iter().map(|l| (l.clone(), 1.0)).collect());
        };
        let mut q = Query::new(self.target);
        for (&factor, &value) in self.evidence.iter().zip(values) {
            if dag.node(factor).is_some() {
                q = q.given(factor, value);
            }
        }
        let probs = query(dag, cpts, &q)?;
        Ok(self.domain.iter().cloned().zip(probs).collect())
    }
}

/// The three learned questions of the treatment chain.
#[derive(Debug, Clone)]
pub struct DecisionNets {
    pub measure: DecisionNet,
    pub location: DecisionNet,
    pub treatment: DecisionNet,
}

/// Learns the measure, location, and treatment networks from maintenance
/// history with Laplace strength `alpha`.
pub fn learn_decision_nets(
    examples: &[DecisionExample],
    alpha: f64,
) -> Result<DecisionNets, RecommendError> {
    if examples.is_empty() {
        return Err(RecommendError::Empty {
            place: "decision examples",
        });
    }
    Ok(DecisionNets {
        measure: DecisionNet::learn("measure", &MEASURE_EVIDENCE, examples, alpha)?,
        location: DecisionNet::learn("location", &LOCATION_EVIDENCE, examples, alpha)?,
        treatment: DecisionNet::learn("treatment", &TREATMENT_EVIDENCE, examples, alpha)?,
    })
}

/// P(measure | treatment recency, pavement type, base type, condition band,
/// disease degree), as (label, probability) pairs in domain order.
pub fn measure_prob(
    nets: &DecisionNets,
    htr: &str,
    pt: &str,
    bt: &str,
    pi: &str,
    dd: &str,
) -> Result<Vec<(String, f64)>, RecommendError> {
    nets.measure.posterior(&[htr, pt, bt, pi, dd])
}

/// P(location | disease degree, dominant single disease).
pub fn location_prob(
    nets: &DecisionNets,
    dd: &str,
    sd: &str,
) -> Result<Vec<(String, f64)>, RecommendError> {
    nets.location.posterior(&[dd, sd])
}

/// P(treatment | location, measure, cost band).
pub fn treatment_prob(
    nets: &DecisionNets,
    location: &str,
    measure: &str,
    co: &str,
) -> Result<Vec<(String, f64)>, RecommendError> {
    nets.treatment.posterior(&[location, measure, co])
}

fn observed_labels(examples: &[DecisionExample], name: &str) -> Vec<String> {
    let mut labels: Vec<String> = Vec::new();
    for ex in examples {
        let v = ex.value(name);
        if !labels.iter().any(|l| l == v) {
            labels.push(v.to_string());
        }
    }
    labels.sort();
    labels
}

/// Width of one condition-gain band in index points.
const GAIN_BAND_WIDTH: f64 = 10.0;

/// Distribution of condition gain per treatment code, over width-10 bands of
/// observed `post - pre` differences, Laplace-smoothed.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivenessTable {
    /// Representative gain (band midpoint) per band, ascending.
    gains: Vec<f64>,
    /// Treatment code -> probability per band.
    rows: BTreeMap<String, Vec<f64>>,
}

impl EffectivenessTable {
    /// Bins every record's condition gain and tallies per-code counts. Bands
    /// are the distinct bins the history actually produced.
    pub fn from_history(
        records: &[MaintenanceRecord],
        alpha: f64,
    ) -> Result<Self, RecommendError> {
        if records.is_empty() {
            return Err(RecommendError::Empty {
                place: "maintenance history",
            });
        }
        let mut bands: Vec<i64> = Vec::new();
        for rec in records {
            let band = gain_band(rec.post_pci - rec.pre_pci);
            if !bands.contains(&band) {
                bands.push(band);
            }
        }
        bands.sort_unstable();
        let mut counts: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for rec in records {
            let band = gain_band(rec.post_pci - rec.pre_pci);
            let slot = bands.iter().position(|b| *b == band).expect("collected");
            counts
                .entry(rec.treatment_code.clone())
                .or_insert_with(|| vec![0.0; bands.len()])
                [slot] += 1.0;
        }
        let d = bands.len() as f64;
        let rows = counts
            .into_iter()
            .map(|(code, row)| {
                let n: f64 = row.iter().sum();
                let probs = row
                    .into_iter()
                    .map(|c| (c + alpha) / (n + alpha * d))
                    .collect();
                (code, probs)
            })
            .collect();
        let gains = bands
            .into_iter()
            .map(|b| b as f64 * GAIN_BAND_WIDTH + GAIN_BAND_WIDTH / 2.0)
            .collect();
        Ok(EffectivenessTable { gains, rows })
    }

    /// Builds a table from explicit gain values and per-code distributions;
    /// rows must match the gain count and sum to 1 within 1e-9.
    pub fn from_rows(
        gains: Vec<f64>,
        rows: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self, RecommendError> {
        if gains.is_empty() {
            return Err(RecommendError::Empty { place: "gain bands" });
        }
        for row in rows.values() {
            if row.len() != gains.len() {
                return Err(RecommendError::DimensionMismatch {
                    expected: gains.len(),
                    got: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(RecommendError::Unnormalized { sum });
            }
        }
        Ok(EffectivenessTable { gains, rows })
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn distribution(&self, code: &str) -> Result<&[f64], RecommendError> {
        self.rows
            .get(code)
            .map(Vec::as_slice)
            .ok_or_else(|| RecommendError::UnknownTreatment {
                code: code.to_string(),
            })
    }

    /// Mean condition gain for a treatment, before any clamping.
    pub fn expected_gain(&self, code: &str) -> Result<f64, RecommendError> {
        let row = self.distribution(code)?;
        Ok(row.iter().zip(&self.gains).map(|(p, g)| p * g).sum())
    }
}

fn gain_band(gain: f64) -> i64 {
    (gain / GAIN_BAND_WIDTH).floor() as i64
}

/// Next-state distribution for acting on a segment.
///
/// Doing nothing moves deterministically to the forecasted next-year
/// condition. A treatment adds each effectiveness band's gain to the
/// forecasted condition (clamped to 0..=100, coinciding outcomes merged) with
/// that band's probability, and marks the segment as recently treated.
pub fn transition(
    state: &MdpState,
    action: &TreatmentAction,
    effectiveness: &EffectivenessTable,
    forecast: &Forecast,
) -> Result<Vec<(MdpState, f64)>, RecommendError> {
    if forecast.route_id != state.segment.route_id || forecast.horizon() == 0 {
        return Err(RecommendError::MissingForecast {
            route_id: state.segment.route_id.clone(),
        });
    }
    let base = forecast.next_year_pci();
    // Prediction carried by the successor: the year after next when the
    // forecast reaches that far, otherwise its last value.
    let following = if forecast.horizon() >= 2 {
        forecast.pci[1]
    } else {
        base
    };

    if action.is_no_action() {
        let next = MdpState::new(
            state.segment.clone(),
            base,
            following,
            state.context(),
            state.year + 1,
        );
        return Ok(vec![(next, 1.0)]);
    }

    let dist = effectiveness.distribution(&action.code)?;
    let mut outcomes: Vec<(f64, f64)> = Vec::new();
    for (p, gain) in dist.iter().zip(effectiveness.gains()) {
        if *p <= 0.0 {
            continue;
        }
        let pci = (base + gain).clamp(0.0, 100.0);
        match outcomes.iter_mut().find(|(existing, _)| *existing == pci) {
            Some((_, mass)) => *mass += p,
            None => outcomes.push((pci, *p)),
        }
    }
    let total: f64 = outcomes.iter().map(|(_, p)| p).sum();
    let mut context = state.context();
    context.htr = "yes".to_string();
    Ok(outcomes
        .into_iter()
        .map(|(pci, p)| {
            let next = MdpState::new(
                state.segment.clone(),
                pci,
                following,
                context.clone(),
                state.year + 1,
            );
            (next, p / total)
        })
        .collect())
}

/// The given states plus every state one [`transition`] away, for sizing a
/// [`StateEncoder`] that has to cover the whole reachable set. One step is
/// enough: transitions rebase condition on the same forecast and the encoder
/// is per-factor, so deeper steps only recombine values present here.
pub fn reachable_states(
    states: &[MdpState],
    actions: &[TreatmentAction],
    effectiveness: &EffectivenessTable,
    forecasts: &BTreeMap<String, Forecast>,
) -> Result<Vec<MdpState>, RecommendError> {
    let mut all = states.to_vec();
    for state in states {
        let forecast = forecasts.get(&state.segment.route_id).ok_or_else(|| {
            RecommendError::MissingForecast {
                route_id: state.segment.route_id.clone(),
            }
        })?;
        for action in actions {
            for (next, _) in transition(state, action, effectiveness, forecast)? {
                all.push(next);
            }
        }
    }
    Ok(all)
}

/// One-hot encoder from state factors to the Q-network input layer. The
/// layout is each factor's sorted categories in [`MdpState::factor_pairs`]
/// order, then the current and predicted condition scaled to 0..=1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateEncoder {
    domains: Vec<(String, Vec<String>)>,
}

impl StateEncoder {
    /// Collects factor categories from every state the network will see.
    pub fn from_states<'a>(states: impl IntoIterator<Item = &'a MdpState>) -> Self {
        let mut domains: Vec<(String, Vec<String>)> = Vec::new();
        for state in states {
            for (i, (name, value)) in state.factor_pairs().into_iter().enumerate() {
                if domains.len() <= i {
                    domains.push((name.to_string(), Vec::new()));
                }
                let labels = &mut domains[i].1;
                if !labels.iter().any(|l| l == value) {
                    labels.push(value.to_string());
                }
            }
        }
        for (_, labels) in &mut domains {
            labels.sort();
        }
        StateEncoder { domains }
    }

    pub fn width(&self) -> usize {
        self.domains.iter().map(|(_, l)| l.len()).sum::<usize>() + 2
    }

    pub fn encode<S: Scalar>(&self, state: &MdpState) -> Result<Vec<S>, RecommendError> {
        let mut out = Vec::with_capacity(self.width());
        for ((name, labels), (_, value)) in self.domains.iter().zip(state.factor_pairs()) {
            let hit = labels.iter().position(|l| l == value).ok_or_else(|| {
                RecommendError::UnknownFactorValue {
                    factor: name.clone(),
                    value: value.to_string(),
                }
            })?;
            for i in 0..labels.len() {
                out.push(if i == hit { S::one() } else { S::zero() });
            }
        }
        out.push(S::of(state.pci / 100.0));
        out.push(S::of(state.predicted_next_pci / 100.0));
        Ok(out)
    }
}

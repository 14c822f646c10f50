//! Segment maintenance-likelihood network.
//!
//! Eight categorical factors describe an evaluation unit; the network
//! estimates the probability that a unit with those factors gets assigned
//! maintenance, learned from historical assignments. The default structure
//! is a naive-Bayes star with the assignment node as the sole parent, which
//! keeps every CPT estimable from short histories; a structure file can
//! override it.

use std::collections::BTreeMap;

use super::PriorityError;
use crate::bayesnet::{learn_cpts, query, validate_structure, Cpt, Dag, NodeSpec, Query, Record};

/// Factor order used everywhere: network nodes, vocabularies, encodings.
pub const FACTOR_NAMES: [&str; 8] = [
    "base_type",
    "pavement_type",
    "road_grade",
    "disease_degree",
    "treated_before",
    "admin_grade",
    "area",
    "special_section",
];

/// The queried node: was the unit assigned maintenance?
pub const TARGET_NODE: &str = "assigned";

const NO: &str = "no";
const YES: &str = "yes";

/// Categorical description of one evaluation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentFeatures {
    pub base_type: String,
    pub pavement_type: String,
    pub road_grade: String,
    /// Discretized bin of total disease quantity per km.
    pub disease_degree: String,
    /// Whether the unit received any treatment before the planning window.
    pub treated_before: String,
    pub admin_grade: String,
    pub area: String,
    pub special_section: String,
}

impl SegmentFeatures {
    pub fn factor_pairs(&self) -> [(&'static str, &str); 8] {
        [
            ("base_type", &self.base_type),
            ("pavement_type", &self.pavement_type),
            ("road_grade", &self.road_grade),
            ("disease_degree", &self.disease_degree),
            ("treated_before", &self.treated_before),
            ("admin_grade", &self.admin_grade),
            ("area", &self.area),
            ("special_section", &self.special_section),
        ]
    }

    pub fn value(&self, factor: &str) -> Option<&str> {
        self.factor_pairs()
            .into_iter()
            .find(|(name, _)| *name == factor)
            .map(|(_, v)| v)
    }
}

/// Observed labels per factor, sorted: the categorical domains for both the
/// network and the one-hot encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVocab {
    domains: BTreeMap<String, Vec<String>>,
}

impl FeatureVocab {
    /// Collects the sorted distinct values of every factor. Build it from
    /// the union of training history and the segments to be scored, so no
    /// value is out of vocabulary at query time.
    pub fn from_features<'a>(features: impl IntoIterator<Item = &'a SegmentFeatures>) -> Self {
        let mut domains: BTreeMap<String, Vec<String>> = FACTOR_NAMES
            .iter()
            .map(|f| (f.to_string(), Vec::new()))
            .collect();
        for seg in features {
            for (name, value) in seg.factor_pairs() {
                let labels = domains.get_mut(name).expect("fixed factor set");
                if !labels.iter().any(|l| l == value) {
                    labels.push(value.to_string());
                }
            }
        }
        for labels in domains.values_mut() {
            labels.sort();
        }
        Self { domains }
    }

    pub fn labels(&self, factor: &str) -> &[String] {
        self.domains.get(factor).map_or(&[], Vec::as_slice)
    }

    /// Width of the one-hot encoding over all eight factors.
    pub fn encoded_width(&self) -> usize {
        FACTOR_NAMES.iter().map(|f| self.labels(f).len()).sum()
    }
}

/// Default structure: `assigned` as the sole parent of every factor with at
/// least two observed labels. Single-label factors carry no signal and are
/// left out of the network (they stay in the encoding).
pub fn maintenance_net_structure(vocab: &FeatureVocab) -> Result<Dag, PriorityError> {
    let mut nodes = vec![NodeSpec::new(TARGET_NODE, &[NO, YES])];
    for factor in FACTOR_NAMES {
        let labels = vocab.labels(factor);
        if labels.len() >= 2 {
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            nodes.push(NodeSpec::new(factor, &refs));
        }
    }
    let mut dag = Dag::new(nodes)?;
    for factor in FACTOR_NAMES {
        if vocab.labels(factor).len() >= 2 {
            dag.add_edge(TARGET_NODE, factor)?;
        }
    }
    Ok(dag)
}

/// A learned assignment-likelihood model.
#[derive(Debug, Clone, PartialEq)]
pub struct MaintenanceNet {
    pub dag: Dag,
    pub cpts: Vec<Cpt>,
}

/// Learns the network from `(features, was_assigned)` history. `structure`
/// overrides the default star; it must declare [`TARGET_NODE`] with a
/// `no|yes` domain, and every other node must be one of the eight factors.
pub fn learn_maintenance_net(
    pairs: &[(SegmentFeatures, bool)],
    vocab: &FeatureVocab,
    alpha: f64,
    structure: Option<Dag>,
) -> Result<MaintenanceNet, PriorityError> {
    let dag = match structure {
        Some(dag) => dag,
        None => maintenance_net_structure(vocab)?,
    };
    validate_structure(&dag)?;
    let target = dag
        .node(TARGET_NODE)
        .ok_or_else(|| PriorityError::InvalidConfig {
            message: format!("structure lacks the `{TARGET_NODE}` node"),
        })?;
    if !target.domain.iter().any(|l| l == YES) || !target.domain.iter().any(|l| l == NO) {
        return Err(PriorityError::InvalidConfig {
            message: format!("`{TARGET_NODE}` must carry a no|yes domain"),
        });
    }
    for spec in dag.nodes() {
        if spec.name != TARGET_NODE && !FACTOR_NAMES.contains(&spec.name.as_str()) {
            return Err(PriorityError::InvalidConfig {
                message: format!("structure node `{}` is not a known factor", spec.name),
            });
        }
    }

    let mut records: Vec<Record> = Vec::with_capacity(pairs.len());
    for (seg, assigned) in pairs {
        let mut record = Record::new();
        for spec in dag.nodes() {
            let value = if spec.name == TARGET_NODE {
                if *assigned { YES } else { NO }
            } else {
                seg.value(&spec.name).expect("factor names are exhaustive")
            };
            record.insert(spec.name.clone(), value.to_string());
        }
        records.push(record);
    }
    let cpts = learn_cpts(&dag, &records, alpha)?;
    Ok(MaintenanceNet { dag, cpts })
}

/// Posterior probability that a unit with these factors is assigned
/// maintenance, with every factor node in the network as evidence.
pub fn segment_maintenance_prob(
    net: &MaintenanceNet,
    seg: &SegmentFeatures,
) -> Result<f64, PriorityError> {
    let mut q = Query::new(TARGET_NODE);
    for spec in net.dag.nodes() {
        if spec.name != TARGET_NODE {
            let value = seg
                .value(&spec.name)
                .expect("factor names are exhaustive");
            q = q.given(&spec.name, value);
        }
    }
    let posterior = query(&net.dag, &net.cpts, &q)?;
    let yes = net
        .dag
        .node(TARGET_NODE)
        .expect("validated at learn time")
        .domain
        .iter()
        .position(|l| l == YES)
        .expect("validated at learn time");
    Ok(posterior[yes])
}

/// One-hot encoding over every factor's vocabulary, factors in
/// [`FACTOR_NAMES`] order and labels in vocabulary (sorted) order.
pub fn encode_features(
    seg: &SegmentFeatures,
    vocab: &FeatureVocab,
) -> Result<Vec<f64>, PriorityError> {
    let mut out = Vec::with_capacity(vocab.encoded_width());
    for factor in FACTOR_NAMES {
        let labels = vocab.labels(factor);
        let value = seg.value(factor).expect("factor names are exhaustive");
        let hit = labels.iter().position(|l| l == value).ok_or_else(|| {
            PriorityError::UnknownFactorValue {
                factor: factor.to_string(),
                value: value.to_string(),
            }
        })?;
        for k in 0..labels.len() {
            out.push(if k == hit { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

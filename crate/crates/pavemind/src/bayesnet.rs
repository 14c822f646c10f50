//! Discrete Bayesian networks over categorical road factors.
//!
//! Structures stay small (at most [`MAX_NODES`] nodes), which lets inference
//! be exact enumeration: no sampling, no approximation, bit-for-bit
//! reproducible. CPTs are learned from complete categorical records with
//! additive smoothing.

use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Hard cap on network size; enumeration cost grows with the product of the
/// domain sizes, and every network in this engine is far smaller.
pub const MAX_NODES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum BayesError {
    #[error("duplicate node `{name}`")]
    DuplicateNode { name: String },
    #[error("node `{name}` needs at least 2 domain labels")]
    DomainTooSmall { name: String },
    #[error("node `{name}` repeats the label `{label}`")]
    DuplicateLabel { name: String, label: String },
    #[error("network has {count} nodes, the enumeration cap is {max}")]
    TooManyNodes { count: usize, max: usize },
    #[error("parent `{parent}` of `{child}` is not a declared node")]
    UndeclaredParent { parent: String, child: String },
    #[error("edge `{parent}` -> `{child}` declared twice")]
    DuplicateEdge { parent: String, child: String },
    #[error("unknown node `{name}`")]
    UnknownNode { name: String },
    #[error("cycle detected: {}", path.join(" -> "))]
    Cycle { path: Vec<String> },
    #[error("record {row} does not cover node `{node}`")]
    MissingValue { row: usize, node: String },
    #[error("record {row} names `{name}`, which is not a declared node")]
    UnknownRecordKey { row: usize, name: String },
    #[error("value `{value}` is outside the domain of `{node}`")]
    ValueOutsideDomain { node: String, value: String },
    #[error("cannot learn from zero records with alpha = 0")]
    EmptyRecords,
    #[error("alpha must be finite and non-negative, got {alpha}")]
    BadAlpha { alpha: f64 },
    #[error("no CPT supplied for node `{node}`")]
    MissingCpt { node: String },
    #[error("CPT for `{node}` does not match the network structure")]
    CptMismatch { node: String },
    #[error("evidence has zero probability under the model")]
    ImpossibleEvidence,
    #[error("structure line {line}: {message}")]
    MalformedStructure { line: usize, message: String },
}

/// A categorical variable and its ordered set of labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub domain: Vec<String>,
}

impl NodeSpec {
    pub fn new(name: &str, domain: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            domain: domain.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn label_index(&self, label: &str) -> Option<usize> {
        self.domain.iter().position(|l| l == label)
    }
}

/// Directed acyclic structure over declared nodes. Edges are added
/// parent-first; acyclicity is checked by [`validate_structure`], which every
/// learning and inference entry point calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    nodes: Vec<NodeSpec>,
    parents: BTreeMap<String, Vec<String>>,
}

impl Dag {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self, BayesError> {
        if nodes.len() > MAX_NODES {
            return Err(BayesError::TooManyNodes {
                count: nodes.len(),
                max: MAX_NODES,
            });
        }
        let mut seen = BTreeMap::new();
        for spec in &nodes {
            if seen.insert(spec.name.clone(), ()).is_some() {
                return Err(BayesError::DuplicateNode {
                    name: spec.name.clone(),
                });
            }
            if spec.domain.len() < 2 {
                return Err(BayesError::DomainTooSmall {
                    name: spec.name.clone(),
                });
            }
            let mut labels = BTreeMap::new();
            for label in &spec.domain {
                if labels.insert(label.clone(), ()).is_some() {
                    return Err(BayesError::DuplicateLabel {
                        name: spec.name.clone(),
                        label: label.clone(),
                    });
                }
            }
        }
        let parents = nodes.iter().map(|n| (n.name.clone(), Vec::new())).collect();
        Ok(Self { nodes, parents })
    }

    pub fn add_edge(&mut self, parent: &str, child: &str) -> Result<(), BayesError> {
        if !self.parents.contains_key(parent) {
            return Err(BayesError::UndeclaredParent {
                parent: parent.to_string(),
                child: child.to_string(),
            });
        }
        let list = self
            .parents
            .get_mut(child)
            .ok_or_else(|| BayesError::UnknownNode {
                name: child.to_string(),
            })?;
        if list.iter().any(|p| p == parent) {
            return Err(BayesError::DuplicateEdge {
                parent: parent.to_string(),
                child: child.to_string(),
            });
        }
        list.push(parent.to_string());
        Ok(())
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn parents(&self, name: &str) -> &[String] {
        self.parents.get(name).map_or(&[], Vec::as_slice)
    }

    fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }
}

/// Checks acyclicity and that every parent is declared. A cycle is reported
/// as the path that closes it.
pub fn validate_structure(dag: &Dag) -> Result<(), BayesError> {
    if dag.nodes.len() > MAX_NODES {
        return Err(BayesError::TooManyNodes {
            count: dag.nodes.len(),
            max: MAX_NODES,
        });
    }
    for (child, parents) in &dag.parents {
        for parent in parents {
            if dag.node_index(parent).is_none() {
                return Err(BayesError::UndeclaredParent {
                    parent: parent.clone(),
                    child: child.clone(),
                });
            }
        }
    }

    // Depth-first search over child -> parent edges; a back edge closes a
    // cycle and the stack from its first occurrence is the reported path.
    const UNSEEN: u8 = 0;
    const ACTIVE: u8 = 1;
    const DONE: u8 = 2;
    let n = dag.nodes.len();
    let mut state = vec![UNSEEN; n];

    fn visit(
        dag: &Dag,
        at: usize,
        state: &mut [u8],
        stack: &mut Vec<usize>,
    ) -> Result<(), BayesError> {
        state[at] = ACTIVE;
        stack.push(at);
        for parent in dag.parents(&dag.nodes[at].name) {
            let p = dag.node_index(parent).expect("checked above");
            match state[p] {
                ACTIVE => {
                    let from = stack.iter().position(|&i| i == p).expect("on stack");
                    let mut path: Vec<String> = stack[from..]
                        .iter()
                        .map(|&i| dag.nodes[i].name.clone())
                        .collect();
                    path.push(dag.nodes[p].name.clone());
                    return Err(BayesError::Cycle { path });
                }
                UNSEEN => visit(dag, p, state, stack)?,
                _ => {}
            }
        }
        stack.pop();
        state[at] = DONE;
        Ok(())
    }

    let mut stack = Vec::new();
    for start in 0..n {
        if state[start] == UNSEEN {
            visit(dag, start, &mut state, &mut stack)?;
        }
    }
    Ok(())
}

/// Conditional probability table for one node: a probability row over the
/// node's domain per parent assignment, parent order matching the structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    node: String,
    parents: Vec<String>,
    /// Domain size of each parent, most-significant first.
    radices: Vec<usize>,
    /// `rows[parent_assignment] = P(node | assignment)`.
    rows: Vec<Vec<f64>>,
}

impl Cpt {
    pub fn node(&self) -> &str {
        &self.node
    }

    pub fn parents(&self) -> &[String] {
        &self.parents
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, parent_values: &[usize]) -> &[f64] {
        &self.rows[self.row_index(parent_values)]
    }

    fn row_index(&self, parent_values: &[usize]) -> usize {
        assert_eq!(parent_values.len(), self.radices.len());
        let mut idx = 0usize;
        for (v, d) in parent_values.iter().zip(&self.radices) {
            debug_assert!(v < d);
            idx = idx * d + v;
        }
        idx
    }
}

/// One observation: a value per node. Complete records only.
pub type Record = BTreeMap<String, String>;

/// Maximum-likelihood counts with additive smoothing:
/// `P(v | pa) = (count + alpha) / (N_pa + alpha * |domain|)`.
///
/// A parent configuration with no observations yields a uniform row (the
/// smoothing-only limit, which also covers `alpha = 0`).
pub fn learn_cpts(dag: &Dag, records: &[Record], alpha: f64) -> Result<Vec<Cpt>, BayesError> {
    validate_structure(dag)?;
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(BayesError::BadAlpha { alpha });
    }
    if alpha == 0.0 && records.is_empty() {
        return Err(BayesError::EmptyRecords);
    }

    // Decode every record into value indexes up front so malformed input is
    // reported by row, not mid-count.
    let mut decoded: Vec<Vec<usize>> = Vec::with_capacity(records.len());
    for (r, record) in records.iter().enumerate() {
        let row = r + 1;
        for name in record.keys() {
            if dag.node_index(name).is_none() {
                return Err(BayesError::UnknownRecordKey {
                    row,
                    name: name.clone(),
                });
            }
        }
        let mut values = Vec::with_capacity(dag.nodes.len());
        for spec in &dag.nodes {
            let raw = record.get(&spec.name).ok_or_else(|| BayesError::MissingValue {
                row,
                node: spec.name.clone(),
            })?;
            let idx = spec
                .label_index(raw)
                .ok_or_else(|| BayesError::ValueOutsideDomain {
                    node: spec.name.clone(),
                    value: raw.clone(),
                })?;
            values.push(idx);
        }
        decoded.push(values);
    }

    let mut cpts = Vec::with_capacity(dag.nodes.len());
    for (i, spec) in dag.nodes.iter().enumerate() {
        let parents = dag.parents(&spec.name).to_vec();
        let parent_idx: Vec<usize> = parents
            .iter()
            .map(|p| dag.node_index(p).expect("validated"))
            .collect();
        let radices: Vec<usize> = parent_idx
            .iter()
            .map(|&p| dag.nodes[p].domain.len())
            .collect();
        let row_count: usize = radices.iter().product::<usize>().max(1);
        let d = spec.domain.len();

        let mut counts = vec![vec![0u64; d]; row_count];
        for values in &decoded {
            let mut idx = 0usize;
            for (&p, &radix) in parent_idx.iter().zip(&radices) {
                idx = idx * radix + values[p];
            }
            counts[idx][values[i]] += 1;
        }

        let rows = counts
            .into_iter()
            .map(|row| {
                let n: u64 = row.iter().sum();
                let denom = n as f64 + alpha * d as f64;
                if denom == 0.0 {
                    vec![1.0 / d as f64; d]
                } else {
                    row.into_iter()
                        .map(|c| (c as f64 + alpha) / denom)
                        .collect()
                }
            })
            .collect();
        cpts.push(Cpt {
            node: spec.name.clone(),
            parents,
            radices,
            rows,
        });
    }
    Ok(cpts)
}

/// A conditional question `P(target | evidence)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub target: String,
    pub evidence: BTreeMap<String, String>,
}

impl Query {
    pub fn new(target: &str) -> Self {
        Self {
            target: target.to_string(),
            evidence: BTreeMap::new(),
        }
    }

    pub fn given(mut self, node: &str, value: &str) -> Self {
        self.evidence.insert(node.to_string(), value.to_string());
        self
    }
}

/// Exact posterior over the target's domain by summing the factored joint
/// over every non-evidence node. The result is normalized and sums to 1.
pub fn query(dag: &Dag, cpts: &[Cpt], q: &Query) -> Result<Vec<f64>, BayesError> {
    validate_structure(dag)?;

    let n = dag.nodes.len();
    let mut cpt_of = vec![None; n];
    for cpt in cpts {
        let i = dag
            .node_index(&cpt.node)
            .ok_or_else(|| BayesError::UnknownNode {
                name: cpt.node.clone(),
            })?;
        let expected_radices: Vec<usize> = dag
            .parents(&cpt.node)
            .iter()
            .map(|p| dag.node(p).expect("validated").domain.len())
            .collect();
        if cpt.parents != dag.parents(&cpt.node)
            || cpt.radices != expected_radices
            || cpt.rows.len() != expected_radices.iter().product::<usize>().max(1)
            || cpt.rows.iter().any(|r| r.len() != dag.nodes[i].domain.len())
        {
            return Err(BayesError::CptMismatch {
                node: cpt.node.clone(),
            });
        }
        cpt_of[i] = Some(cpt);
    }
    for (i, slot) in cpt_of.iter().enumerate() {
        if slot.is_none() {
            return Err(BayesError::MissingCpt {
                node: dag.nodes[i].name.clone(),
            });
        }
    }

    let target = dag
        .node_index(&q.target)
        .ok_or_else(|| BayesError::UnknownNode {
            name: q.target.clone(),
        })?;
    let mut assignment = vec![usize::MAX; n];
    for (name, value) in &q.evidence {
        let i = dag
            .node_index(name)
            .ok_or_else(|| BayesError::UnknownNode { name: name.clone() })?;
        let v = dag.nodes[i]
            .label_index(value)
            .ok_or_else(|| BayesError::ValueOutsideDomain {
                node: name.clone(),
                value: value.clone(),
            })?;
        assignment[i] = v;
    }

    let hidden: Vec<usize> = (0..n)
        .filter(|&i| i != target && assignment[i] == usize::MAX)
        .collect();
    let parent_indexes: Vec<Vec<usize>> = dag
        .nodes
        .iter()
        .map(|spec| {
            dag.parents(&spec.name)
                .iter()
                .map(|p| dag.node_index(p).expect("validated"))
                .collect()
        })
        .collect();

    let target_fixed = assignment[target];
    let target_domain = dag.nodes[target].domain.len();
    let mut dist = vec![0.0f64; target_domain];
    let mut parent_values = Vec::with_capacity(MAX_NODES);
    for tv in 0..target_domain {
        if target_fixed != usize::MAX && target_fixed != tv {
            continue;
        }
        assignment[target] = tv;
        let mut counter = vec![0usize; hidden.len()];
        loop {
            for (&h, &v) in hidden.iter().zip(&counter) {
                assignment[h] = v;
            }
            let mut joint = 1.0f64;
            for i in 0..n {
                parent_values.clear();
                parent_values.extend(parent_indexes[i].iter().map(|&p| assignment[p]));
                let cpt = cpt_of[i].expect("checked complete");
                joint *= cpt.row(&parent_values)[assignment[i]];
            }
            dist[tv] += joint;

            // Mixed-radix increment over the hidden nodes.
            let mut pos = hidden.len();
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                counter[pos] += 1;
                if counter[pos] < dag.nodes[hidden[pos]].domain.len() {
                    break;
                }
                counter[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX || hidden.is_empty() {
                break;
            }
        }
    }

    let total: f64 = dist.iter().sum();
    if !(total > 0.0) {
        return Err(BayesError::ImpossibleEvidence);
    }
    for p in &mut dist {
        *p /= total;
    }
    Ok(dist)
}

/// Parses the structure file format:
///
/// ```text
/// node surface : asphalt|concrete
/// edge surface -> treated
/// ```
///
/// Blank lines and `#` comments are ignored. The parsed structure is fully
/// validated, cycles included.
pub fn parse_structure(text: &str) -> Result<Dag, BayesError> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("node ") {
            let (name, domain) =
                rest.split_once(':')
                    .ok_or_else(|| BayesError::MalformedStructure {
                        line,
                        message: "expected `node <name> : <label>|<label>|…`".into(),
                    })?;
            let name = name.trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(BayesError::MalformedStructure {
                    line,
                    message: format!("bad node name `{name}`"),
                });
            }
            let labels: Vec<String> = domain
                .split('|')
                .map(|l| l.trim().to_string())
                .collect();
            if labels.iter().any(String::is_empty) {
                return Err(BayesError::MalformedStructure {
                    line,
                    message: "empty domain label".into(),
                });
            }
            nodes.push(NodeSpec {
                name: name.to_string(),
                domain: labels,
            });
        } else if let Some(rest) = trimmed.strip_prefix("edge ") {
            let (parent, child) =
                rest.split_once("->")
                    .ok_or_else(|| BayesError::MalformedStructure {
                        line,
                        message: "expected `edge <parent> -> <child>`".into(),
                    })?;
            edges.push((parent.trim().to_string(), child.trim().to_string()));
        } else {
            return Err(BayesError::MalformedStructure {
                line,
                message: format!("unrecognized directive `{trimmed}`"),
            });
        }
    }

    let mut dag = Dag::new(nodes)?;
    for (parent, child) in &edges {
        dag.add_edge(parent, child)?;
    }
    validate_structure(&dag)?;
    Ok(dag)
}

/// Inverse of [`parse_structure`]; the output round-trips.
pub fn format_structure(dag: &Dag) -> String {
    let mut out = String::new();
    for spec in &dag.nodes {
        let _ = writeln!(out, "node {} : {}", spec.name, spec.domain.join("|"));
    }
    for spec in &dag.nodes {
        for parent in dag.parents(&spec.name) {
            let _ = writeln!(out, "edge {} -> {}", parent, spec.name);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary(name: &str) -> NodeSpec {
        NodeSpec::new(name, &["no", "yes"])
    }

    fn record(pairs: &[(&str, &str)]) -> Record {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn chain_validates_and_cycle_reports_its_path() {
        let mut chain = Dag::new(vec![binary("A"), binary("B"), binary("C")]).unwrap();
        chain.add_edge("A", "B").unwrap();
        chain.add_edge("B", "C").unwrap();
        assert!(validate_structure(&chain).is_ok());

        let mut looped = Dag::new(vec![binary("A"), binary("B")]).unwrap();
        looped.add_edge("A", "B").unwrap();
        looped.add_edge("B", "A").unwrap();
        match validate_structure(&looped).unwrap_err() {
            BayesError::Cycle { path } => {
                assert!(path.contains(&"A".to_string()));
                assert!(path.contains(&"B".to_string()));
                assert_eq!(path.first(), path.last());
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn undeclared_parent_is_rejected() {
        let mut dag = Dag::new(vec![binary("A")]).unwrap();
        assert!(matches!(
            dag.add_edge("X", "A"),
            Err(BayesError::UndeclaredParent { parent, child })
                if parent == "X" && child == "A"
        ));
    }

    #[test]
    fn node_cap_is_enforced() {
        let nodes: Vec<NodeSpec> = (0..11).map(|i| binary(&format!("n{i}"))).collect();
        assert!(matches!(
            Dag::new(nodes),
            Err(BayesError::TooManyNodes { count: 11, max: 10 })
        ));
    }

    #[test]
    fn smoothed_count_matches_hand_formula() {
        // 8 of 10 rows "yes" with alpha = 1: P(yes) = (8 + 1) / (10 + 2).
        let dag = Dag::new(vec![binary("t")]).unwrap();
        let records: Vec<Record> = (0..10)
            .map(|i| record(&[("t", if i < 8 { "yes" } else { "no" })]))
            .collect();
        let cpts = learn_cpts(&dag, &records, 1.0).unwrap();
        let row = cpts[0].row(&[]);
        assert!((row[1] - 0.75).abs() < 1e-12);
        assert!((row[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unseen_parent_configuration_smooths_to_uniform() {
        let mut dag = Dag::new(vec![binary("p"), binary("c")]).unwrap();
        dag.add_edge("p", "c").unwrap();
        // p is always "no", so the p = "yes" row of c's CPT is unobserved.
        let records: Vec<Record> = (0..6)
            .map(|i| record(&[("p", "no"), ("c", if i % 2 == 0 { "yes" } else { "no" })]))
            .collect();
        let cpts = learn_cpts(&dag, &records, 1.0).unwrap();
        let c = cpts.iter().find(|c| c.node() == "c").unwrap();
        let unseen = c.row(&[1]);
        assert_eq!(unseen, &[0.5, 0.5]);
    }

    #[test]
    fn alpha_zero_gives_exact_frequencies() {
        let dag = Dag::new(vec![binary("t")]).unwrap();
        let records: Vec<Record> = (0..4)
            .map(|i| record(&[("t", if i < 3 { "yes" } else { "no" })]))
            .collect();
        let cpts = learn_cpts(&dag, &records, 0.0).unwrap();
        assert_eq!(cpts[0].row(&[]), &[0.25, 0.75]);
    }

    #[test]
    fn alpha_zero_with_no_records_errors() {
        let dag = Dag::new(vec![binary("t")]).unwrap();
        assert!(matches!(
            learn_cpts(&dag, &[], 0.0),
            Err(BayesError::EmptyRecords)
        ));
    }

    #[test]
    fn records_are_validated_by_row() {
        let dag = Dag::new(vec![binary("a"), binary("b")]).unwrap();
        let missing = vec![record(&[("a", "yes")])];
        assert!(matches!(
            learn_cpts(&dag, &missing, 1.0),
            Err(BayesError::MissingValue { row: 1, node }) if node == "b"
        ));
        let stray = vec![record(&[("a", "yes"), ("b", "no"), ("z", "yes")])];
        assert!(matches!(
            learn_cpts(&dag, &stray, 1.0),
            Err(BayesError::UnknownRecordKey { row: 1, name }) if name == "z"
        ));
        let bad = vec![record(&[("a", "maybe"), ("b", "no")])];
        assert!(matches!(
            learn_cpts(&dag, &bad, 1.0),
            Err(BayesError::ValueOutsideDomain { node, value })
                if node == "a" && value == "maybe"
        ));
    }

    #[test]
    fn uniform_cpts_yield_uniform_posterior() {
        let mut dag = Dag::new(vec![binary("a"), binary("b"), binary("c")]).unwrap();
        dag.add_edge("a", "b").unwrap();
        dag.add_edge("b", "c").unwrap();
        // No records + smoothing = every row uniform.
        let cpts = learn_cpts(&dag, &[], 1.0).unwrap();
        let posterior = query(&dag, &cpts, &Query::new("b").given("c", "yes")).unwrap();
        assert!((posterior[0] - 0.5).abs() < 1e-12);
        assert!((posterior[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn evidence_on_all_parents_returns_the_cpt_row() {
        let mut dag = Dag::new(vec![binary("a"), binary("b"), binary("c")]).unwrap();
        dag.add_edge("a", "b").unwrap();
        dag.add_edge("b", "c").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let records: Vec<Record> = (0..40)
            .map(|_| {
                record(&[
                    ("a", if rng.gen_bool(0.3) { "yes" } else { "no" }),
                    ("b", if rng.gen_bool(0.6) { "yes" } else { "no" }),
                    ("c", if rng.gen_bool(0.5) { "yes" } else { "no" }),
                ])
            })
            .collect();
        let cpts = learn_cpts(&dag, &records, 1.0).unwrap();
        let b = cpts.iter().find(|c| c.node() == "b").unwrap();

        // c is unobserved downstream, so P(b | a = yes) is b's CPT row.
        let posterior = query(&dag, &cpts, &Query::new("b").given("a", "yes")).unwrap();
        let expected = b.row(&[1]);
        assert!((posterior[0] - expected[0]).abs() < 1e-12);
        assert!((posterior[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn query_validates_inputs() {
        let dag = Dag::new(vec![binary("a"), binary("b")]).unwrap();
        let cpts = learn_cpts(&dag, &[], 1.0).unwrap();
        assert!(matches!(
            query(&dag, &cpts, &Query::new("zz")),
            Err(BayesError::UnknownNode { name }) if name == "zz"
        ));
        assert!(matches!(
            query(&dag, &cpts, &Query::new("a").given("b", "sideways")),
            Err(BayesError::ValueOutsideDomain { node, value })
                if node == "b" && value == "sideways"
        ));
        assert!(matches!(
            query(&dag, &cpts[..1], &Query::new("a")),
            Err(BayesError::MissingCpt { node }) if node == "b"
        ));
    }

    /// Brute-force oracle: materialize the full joint table by walking every
    /// complete assignment, then condition on the evidence by summation.
    /// Independent of the enumeration in `query` (no shared odometer code).
    fn joint_table_posterior(dag: &Dag, cpts: &[Cpt], q: &Query) -> Vec<f64> {
        let n = dag.nodes().len();
        let sizes: Vec<usize> = dag.nodes().iter().map(|s| s.domain.len()).collect();
        let total: usize = sizes.iter().product();
        let target = dag.nodes().iter().position(|s| s.name == q.target).unwrap();
        let evidence: Vec<(usize, usize)> = q
            .evidence
            .iter()
            .map(|(name, value)| {
                let i = dag.nodes().iter().position(|s| &s.name == name).unwrap();
                let v = dag.nodes()[i].label_index(value).unwrap();
                (i, v)
            })
            .collect();

        let mut dist = vec![0.0f64; sizes[target]];
        for flat in 0..total {
            // Decode the flat index digit by digit, last node fastest.
            let mut rest = flat;
            let mut assignment = vec![0usize; n];
            for i in (0..n).rev() {
                assignment[i] = rest % sizes[i];
                rest /= sizes[i];
            }
            if evidence.iter().any(|&(i, v)| assignment[i] != v) {
                continue;
            }
            let mut p = 1.0;
            for (i, spec) in dag.nodes().iter().enumerate() {
                let cpt = cpts.iter().find(|c| c.node() == spec.name).unwrap();
                let parent_values: Vec<usize> = dag
                    .parents(&spec.name)
                    .iter()
                    .map(|parent| {
                        let pi = dag.nodes().iter().position(|s| &s.name == parent).unwrap();
                        assignment[pi]
                    })
                    .collect();
                p *= cpt.row(&parent_values)[assignment[i]];
            }
            dist[assignment[target]] += p;
        }
        let z: f64 = dist.iter().sum();
        dist.iter().map(|p| p / z).collect()
    }

    fn random_network(rng: &mut ChaCha8Rng, nodes: usize) -> (Dag, Vec<Cpt>) {
        let specs: Vec<NodeSpec> = (0..nodes).map(|i| binary(&format!("n{i}"))).collect();
        let mut dag = Dag::new(specs).unwrap();
        for i in 0..nodes {
            for j in (i + 1)..nodes {
                if rng.gen_bool(0.3) {
                    dag.add_edge(&format!("n{i}"), &format!("n{j}")).unwrap();
                }
            }
        }
        let records: Vec<Record> = (0..50)
            .map(|_| {
                (0..nodes)
                    .map(|i| {
                        (
                            format!("n{i}"),
                            if rng.gen_bool(0.5) { "yes" } else { "no" }.to_string(),
                        )
                    })
                    .collect()
            })
            .collect();
        let cpts = learn_cpts(&dag, &records, 1.0).unwrap();
        (dag, cpts)
    }

    #[test]
    fn enumeration_matches_the_joint_table_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let (dag, cpts) = random_network(&mut rng, 6);
            let mut q = Query::new("n2");
            for i in [0usize, 4] {
                if rng.gen_bool(0.5) {
                    q = q.given(&format!("n{i}"), if rng.gen_bool(0.5) { "yes" } else { "no" });
                }
            }
            let fast = query(&dag, &cpts, &q).unwrap();
            let slow = joint_table_posterior(&dag, &cpts, &q);
            assert!((fast.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "query {a} vs oracle {b}");
                assert!(*a > 0.0, "smoothed posterior must stay positive");
            }
        }
    }

    #[test]
    fn posterior_is_invariant_to_declaration_order() {
        let records: Vec<Record> = {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            (0..30)
                .map(|_| {
                    record(&[
                        ("a", if rng.gen_bool(0.4) { "yes" } else { "no" }),
                        ("b", if rng.gen_bool(0.7) { "yes" } else { "no" }),
                        ("c", if rng.gen_bool(0.2) { "yes" } else { "no" }),
                    ])
                })
                .collect()
        };
        let build = |order: &[&str]| {
            let mut dag =
                Dag::new(order.iter().map(|n| binary(n)).collect::<Vec<_>>()).unwrap();
            dag.add_edge("a", "b").unwrap();
            dag.add_edge("a", "c").unwrap();
            let cpts = learn_cpts(&dag, &records, 1.0).unwrap();
            query(&dag, &cpts, &Query::new("a").given("b", "yes")).unwrap()
        };
        let forward = build(&["a", "b", "c"]);
        let shuffled = build(&["c", "a", "b"]);
        for (x, y) in forward.iter().zip(&shuffled) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn structure_text_round_trips() {
        let text = "\
# rank-model structure
node surface : asphalt|concrete
node traffic : H|M|L
node treated : no|yes

edge surface -> treated
edge traffic -> treated
";
        let dag = parse_structure(text).unwrap();
        assert_eq!(dag.nodes().len(), 3);
        assert_eq!(dag.parents("treated"), ["surface", "traffic"]);
        let formatted = format_structure(&dag);
        let reparsed = parse_structure(&formatted).unwrap();
        assert_eq!(dag, reparsed);
    }

    #[test]
    fn structure_parser_reports_line_numbers() {
        assert!(matches!(
            parse_structure("node ok : a|b\nwhatever"),
            Err(BayesError::MalformedStructure { line: 2, .. })
        ));
        assert!(matches!(
            parse_structure("node bad a|b"),
            Err(BayesError::MalformedStructure { line: 1, .. })
        ));
        assert!(matches!(
            parse_structure("node a : x|y\nedge a <- a"),
            Err(BayesError::MalformedStructure { line: 2, .. })
        ));
        // Cycles are caught at parse time too.
        assert!(matches!(
            parse_structure("node a : x|y\nnode b : x|y\nedge a -> b\nedge b -> a"),
            Err(BayesError::Cycle { .. })
        ));
    }
}

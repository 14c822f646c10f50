//! Exact solver for small finite decision processes.
//!
//! Value iteration here serves two jobs: planning over discretized segment
//! states when the space is small enough to enumerate, and acting as the
//! ground truth the Q-network is verified against.

use super::RecommendError;

/// Finite decision process in tabular form. `transitions[s][a]` lists
/// `(next_state, probability)` pairs; `rewards[s][a]` is the immediate
/// expected reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    pub rewards: Vec<Vec<f64>>,
}

impl TabularMdp {
    /// Seeded random process for benchmarks and agent verification: each
    /// state-action pair spreads over up to three next states with
    /// normalized weights and a uniform reward in [-1, 1).
    pub fn random(states: usize, actions: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let transitions = (0..states)
            .map(|_| {
                (0..actions)
                    .map(|_| {
                        let targets: Vec<usize> =
                            (0..3).map(|_| rng.gen_range(0..states)).collect();
                        let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
                        let z: f64 = weights.iter().sum();
                        let mut outcomes: Vec<(usize, f64)> = Vec::new();
                        for (t, w) in targets.iter().zip(&weights) {
                            match outcomes.iter_mut().find(|(n, _)| n == t) {
                                Some((_, p)) => *p += w / z,
                                None => outcomes.push((*t, w / z)),
                            }
                        }
                        outcomes
                    })
                    .collect()
            })
            .collect();
        let rewards = (0..states)
            .map(|_| (0..actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        TabularMdp {
            transitions,
            rewards,
        }
    }

    pub fn num_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn num_actions(&self) -> usize {
        self.transitions.first().map_or(0, Vec::len)
    }

    /// Checks the shape is rectangular, every next-state index is in range,
    /// and every transition row is a distribution.
    pub fn validate(&self) -> Result<(), RecommendError> {
        let n = self.num_states();
        let a = self.num_actions();
        if n == 0 {
            return Err(RecommendError::Empty { place: "states" });
        }
        if a == 0 {
            return Err(RecommendError::Empty { place: "actions" });
        }
        if self.rewards.len() != n {
            return Err(RecommendError::DimensionMismatch {
                expected: n,
                got: self.rewards.len(),
            });
        }
        for (s, (row, rew)) in self.transitions.iter().zip(&self.rewards).enumerate() {
            if row.len() != a || rew.len() != a {
                return Err(RecommendError::DimensionMismatch {
                    expected: a,
                    got: row.len().min(rew.len()),
                });
            }
            for (act, outcomes) in row.iter().enumerate() {
                let mut sum = 0.0;
                for &(next, p) in outcomes {
                    if next >= n {
                        return Err(RecommendError::DimensionMismatch {
                            expected: n,
                            got: next,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(RecommendError::BadTransition {
                        state: s,
                        action: act,
                        sum,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Converged utilities with the greedy policy they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    pub utilities: Vec<f64>,
    /// Greedy action per state, ties broken by lowest action index.
    pub policy: Vec<usize>,
    pub sweeps: usize,
}

/// Iterates Bellman backups until the largest per-state change falls below
/// `epsilon`, then extracts the greedy policy.
pub fn value_iteration(
    mdp: &TabularMdp,
    gamma: f64,
    epsilon: f64,
) -> Result<ValueIteration, RecommendError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(RecommendError::BadDiscount { gamma });
    }
    if !(epsilon > 0.0) {
        return Err(RecommendError::InvalidConfig {
            message: format!("epsilon must be positive, got {epsilon}"),
        });
    }
    mdp.validate()?;

    let n = mdp.num_states();
    let mut utilities = vec![0.0; n];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut next = vec![0.0; n];
        let mut delta: f64 = 0.0;
        for s in 0..n {
            next[s] = best_backup(mdp, &utilities, gamma, s).1;
            delta = delta.max((next[s] - utilities[s]).abs());
        }
        utilities = next;
        if delta < epsilon {
            break;
        }
    }
    let policy = (0..n)
        .map(|s| best_backup(mdp, &utilities, gamma, s).0)
        .collect();
    Ok(ValueIteration {
        utilities,
        policy,
        sweeps,
    })
}

/// (argmax action, max value) of one Bellman backup at state `s`. Strict
/// comparison keeps the lowest action index on ties.
fn best_backup(mdp: &TabularMdp, utilities: &[f64], gamma: f64, s: usize) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (a, outcomes) in mdp.transitions[s].iter().enumerate() {
        let future: f64 = outcomes.iter().map(|&(next, p)| p * utilities[next]).sum();
        let q = mdp.rewards[s][a] + gamma * future;
        if q > best.1 {
            best = (a, q);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{solve, Matrix};

    fn deterministic(next: usize) -> Vec<(usize, f64)> {
        vec![(next, 1.0)]
    }

    #[test]
    fn zero_discount_is_myopic() {
        let mdp = TabularMdp {
            transitions: vec![
                vec![deterministic(1), deterministic(0)],
                vec![deterministic(0), deterministic(1)],
            ],
            rewards: vec![vec![3.0, 7.0], vec![2.0, -1.0]],
        };
        let out = value_iteration(&mdp, 0.0, 1e-9).unwrap();
        assert_eq!(out.utilities, vec![7.0, 2.0]);
        assert_eq!(out.policy, vec![1, 0]);
    }

    #[test]
    fn self_loop_sums_the_geometric_series() {
        let mdp = TabularMdp {
            transitions: vec![vec![deterministic(0)]],
            rewards: vec![vec![1.0]],
        };
        let out = value_iteration(&mdp, 0.9, 1e-10).unwrap();
        assert!((out.utilities[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn converged_utilities_are_a_fixed_point() {
        let mdp = TabularMdp::random(8, 3, 11);
        let gamma = 0.85;
        let epsilon = 1e-9;
        let out = value_iteration(&mdp, gamma, epsilon).unwrap();
        let residual = (0..mdp.num_states())
            .map(|s| (best_backup(&mdp, &out.utilities, gamma, s).1 - out.utilities[s]).abs())
            .fold(0.0, f64::max);
        assert!(residual < epsilon);
    }

    #[test]
    fn ties_pick_the_lowest_action_index() {
        let mdp = TabularMdp {
            transitions: vec![vec![deterministic(0), deterministic(0), deterministic(0)]],
            rewards: vec![vec![4.0, 4.0, 4.0]],
        };
        let out = value_iteration(&mdp, 0.5, 1e-9).unwrap();
        assert_eq!(out.policy, vec![0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mdp = TabularMdp {
            transitions: vec![vec![deterministic(0)]],
            rewards: vec![vec![1.0]],
        };
        assert!(matches!(
            value_iteration(&mdp, 1.0, 1e-9),
            Err(RecommendError::BadDiscount { .. })
        ));
        assert!(matches!(
            value_iteration(&mdp, 0.9, 0.0),
            Err(RecommendError::InvalidConfig { .. })
        ));

        let leaky = TabularMdp {
            transitions: vec![vec![vec![(0, 0.5)]]],
            rewards: vec![vec![1.0]],
        };
        assert!(matches!(
            value_iteration(&leaky, 0.9, 1e-9),
            Err(RecommendError::BadTransition {
                state: 0,
                action: 0,
                ..
            })
        ));
    }

    /// Evaluates a fixed policy exactly: U = R + gamma * P * U solved as a
    /// linear system.
    fn evaluate_policy(mdp: &TabularMdp, policy: &[usize], gamma: f64) -> Vec<f64> {
        let n = mdp.num_states();
        let mut a: Matrix<f64> = Matrix::zeros(n, n);
        let mut b = vec![0.0; n];
        for s in 0..n {
            a.set(s, s, 1.0);
            for &(next, p) in &mdp.transitions[s][policy[s]] {
                a.set(s, next, a.get(s, next) - gamma * p);
            }
            b[s] = mdp.rewards[s][policy[s]];
        }
        solve(&a, &b).expect("policy evaluation system is non-singular")
    }

    #[test]
    fn matches_exhaustive_policy_enumeration() {
        let states = 10;
        let actions = 3;
        let gamma = 0.9;
        let mdp = TabularMdp::random(states, actions, 7);
        let out = value_iteration(&mdp, gamma, 1e-12).unwrap();

        // Optimal utilities are the pointwise best over every deterministic
        // stationary policy, all 3^10 of them evaluated exactly.
        let mut best = vec![f64::NEG_INFINITY; states];
        let total = actions.pow(states as u32);
        for code in 0..total {
            let mut c = code;
            let policy: Vec<usize> = (0..states)
                .map(|_| {
                    let a = c % actions;
                    c /= actions;
                    a
                })
                .collect();
            for (b, u) in best.iter_mut().zip(evaluate_policy(&mdp, &policy, gamma)) {
                if u > *b {
                    *b = u;
                }
            }
        }
        for (u, b) in out.utilities.iter().zip(&best) {
            assert!((u - b).abs() < 1e-6, "utility {u} vs enumerated {b}");
        }

        // The greedy policy must itself achieve the optimal utilities.
        let achieved = evaluate_policy(&mdp, &out.policy, gamma);
        for (u, b) in achieved.iter().zip(&best) {
            assert!((u - b).abs() < 1e-6);
        }
    }
}

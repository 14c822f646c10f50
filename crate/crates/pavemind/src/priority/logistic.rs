//! Logistic regression trained by full-batch gradient descent on the mean
//! log-loss. Small feature counts, deterministic seeding; this is the weight
//! step of the segment-scoring procedure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PriorityError;
use crate::linalg::dot;
use crate::scalar::Scalar;

fn sigmoid<S: Scalar>(z: S) -> S {
    S::one() / (S::one() + (-z).exp())
}

#[derive(Debug, Clone)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 3000,
            seed: 0,
        }
    }
}

/// `P(positive | x) = sigmoid(weights . x + intercept)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<S: Scalar> {
    pub weights: Vec<S>,
    pub intercept: S,
    /// Mean log-loss per iteration.
    pub loss_trace: Vec<S>,
}

impl<S: Scalar> LogisticModel<S> {
    pub fn from_parts(weights: Vec<S>, intercept: S) -> Self {
        Self {
            weights,
            intercept,
            loss_trace: Vec::new(),
        }
    }

    pub fn raw(&self, features: &[S]) -> Result<S, PriorityError> {
        if features.len() != self.weights.len() {
            return Err(PriorityError::DimensionMismatch {
                expected: self.weights.len(),
                got: features.len(),
            });
        }
        Ok(dot(&self.weights, features) + self.intercept)
    }

    pub fn score(&self, features: &[S]) -> Result<S, PriorityError> {
        Ok(sigmoid(self.raw(features)?))
    }
}

/// Mean log-loss and its gradient (weights gradient followed by the
/// intercept slot).
fn loss_and_grad<S: Scalar>(
    rows: &[Vec<S>],
    labels: &[bool],
    weights: &[S],
    intercept: S,
) -> (S, Vec<S>, S) {
    let n = S::of(rows.len() as f64);
    let mut loss = S::zero();
    let mut grad_w = vec![S::zero(); weights.len()];
    let mut grad_b = S::zero();
    for (row, &label) in rows.iter().zip(labels) {
        let p = sigmoid(dot(weights, row) + intercept);
        let y = if label { S::one() } else { S::zero() };
        // Clamp away from 0/1 so the log stays finite on separable data.
        let eps = S::of(1e-12);
        let safe = p.max(eps).min(S::one() - eps);
        loss -= y * safe.ln() + (S::one() - y) * (S::one() - safe).ln();
        let d = p - y;
        for (g, x) in grad_w.iter_mut().zip(row) {
            *g += d * *x;
        }
        grad_b += d;
    }
    loss /= n;
    for g in &mut grad_w {
        *g /= n;
    }
    grad_b /= n;
    (loss, grad_w, grad_b)
}

/// Fits by gradient descent from a small seeded uniform init. Requires at
/// least one example of each class; with a single class the loss has no
/// finite minimizer.
pub fn fit_logistic<S: Scalar>(
    rows: &[Vec<S>],
    labels: &[bool],
    cfg: &LogisticConfig,
) -> Result<LogisticModel<S>, PriorityError> {
    if rows.len() != labels.len() {
        return Err(PriorityError::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    if rows.is_empty() {
        return Err(PriorityError::Empty);
    }
    let width = rows[0].len();
    for row in rows {
        if row.len() != width {
            return Err(PriorityError::DimensionMismatch {
                expected: width,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(PriorityError::NonFinite { index: 0 });
        }
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(PriorityError::SingleClass {
            class: if positives == 0 { "negative" } else { "positive" }.to_string(),
        });
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(PriorityError::InvalidConfig {
            message: format!("learning rate {} is not positive", cfg.learning_rate),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights: Vec<S> = (0..width)
        .map(|_| S::of(rng.gen_range(-0.01..0.01)))
        .collect();
    let mut intercept = S::of(rng.gen_range(-0.01..0.01));
    let lr = S::of(cfg.learning_rate);
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let (loss, grad_w, grad_b) = loss_and_grad(rows, labels, &weights, intercept);
        loss_trace.push(loss);
        for (w, g) in weights.iter_mut().zip(&grad_w) {
            *w -= lr * *g;
        }
        intercept -= lr * grad_b;
    }
    Ok(LogisticModel {
        weights,
        intercept,
        loss_trace,
    })
}

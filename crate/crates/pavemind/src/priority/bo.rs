//! Bayesian optimization with a Gaussian-process surrogate.
//!
//! Squared-exponential kernel over inputs normalized to the unit box,
//! expected-improvement acquisition maximized over a random candidate set.
//! Everything is driven by one seeded generator, so a run is a pure function
//! of (objective, bounds, config). The surrogate always works in f64; only
//! the objective sees the caller's scalar type.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PriorityError;
use crate::linalg::{cholesky, cholesky_solve, Matrix};
use crate::scalar::Scalar;

const LENGTHSCALE: f64 = 0.25;
const NOISE: f64 = 1e-6;
/// Small exploration margin subtracted from the incumbent inside EI.
const XI: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct BayesOptConfig {
    pub iterations: usize,
    /// Random evaluations before the surrogate takes over.
    pub initial_design: usize,
    /// Candidate points scored by the acquisition per iteration.
    pub candidates: usize,
    pub seed: u64,
}

impl Default for BayesOptConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            initial_design: 8,
            candidates: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesOptResult<S: Scalar> {
    pub point: Vec<S>,
    pub value: S,
    pub evaluations: usize,
}

fn erf(x: f64) -> f64 {
    // Abramowitz & Stegun 7.1.26, |error| < 1.5e-7; plenty for acquisition.
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn kernel(a: &[f64], b: &[f64]) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        d2 += d * d;
    }
    (-d2 / (2.0 * LENGTHSCALE * LENGTHSCALE)).exp()
}

struct Surrogate {
    points: Vec<Vec<f64>>,
    /// `K^-1 t` for the standardized targets.
    alpha: Vec<f64>,
    chol: Matrix<f64>,
    best_t: f64,
}

impl Surrogate {
    fn fit(points: &[Vec<f64>], targets: &[f64]) -> Option<Self> {
        let n = points.len();
        let mean = targets.iter().sum::<f64>() / n as f64;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let t: Vec<f64> = targets.iter().map(|y| (y - mean) / scale).collect();

        let mut jitter = NOISE;
        for _ in 0..8 {
            let k = Matrix::from_fn(n, n, |r, c| {
                kernel(&points[r], &points[c]) + if r == c { jitter } else { 0.0 }
            });
            if let Some(chol) = cholesky(&k) {
                let alpha = cholesky_solve(&chol, &t);
                let best_t = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                return Some(Self {
                    points: points.to_vec(),
                    alpha,
                    chol,
                    best_t,
                });
            }
            jitter *= 100.0;
        }
        None
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k_star: Vec<f64> = self.points.iter().map(|p| kernel(p, x)).collect();
        let mean: f64 = k_star.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = cholesky_solve(&self.chol, &k_star);
        let reduction: f64 = k_star.iter().zip(&v).map(|(k, w)| k * w).sum();
        let var = (1.0 + NOISE - reduction).max(1e-12);
        (mean, var.sqrt())
    }

    fn expected_improvement(&self, x: &[f64]) -> f64 {
        let (mean, sd) = self.predict(x);
        let imp = mean - self.best_t - XI;
        if sd <= 0.0 {
            return imp.max(0.0);
        }
        let z = imp / sd;
        imp * normal_cdf(z) + sd * normal_pdf(z)
    }
}

fn sample_point(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) })
        .collect()
}

fn normalize(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

/// Maximizes `objective` over the box `bounds`. Returns the best point among
/// all evaluations (initial design included), so the result can only improve
/// on the initial random design.
pub fn bayes_opt<S: Scalar>(
    objective: impl Fn(&[S]) -> S,
    bounds: &[(S, S)],
    cfg: &BayesOptConfig,
) -> Result<BayesOptResult<S>, PriorityError> {
    if bounds.is_empty() {
        return Err(PriorityError::EmptySpace);
    }
    let bounds_f: Vec<(f64, f64)> = bounds
        .iter()
        .map(|(lo, hi)| (lo.as_f64(), hi.as_f64()))
        .collect();
    for (dim, &(lo, hi)) in bounds_f.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(PriorityError::BadBounds { dim, lo, hi });
        }
    }
    if cfg.initial_design == 0 || cfg.candidates == 0 {
        return Err(PriorityError::InvalidConfig {
            message: "initial_design and candidates must both be at least 1".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let evaluate = |x: &[f64], index: usize| -> Result<f64, PriorityError> {
        let typed: Vec<S> = x.iter().map(|v| S::of(*v)).collect();
        let y = objective(&typed).as_f64();
        if !y.is_finite() {
            return Err(PriorityError::BadObjective { index });
        }
        Ok(y)
    };

    let mut raw_points: Vec<Vec<f64>> = Vec::new();
    let mut norm_points: Vec<Vec<f64>> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for i in 0..cfg.initial_design {
        let x = sample_point(&mut rng, &bounds_f);
        let y = evaluate(&x, i)?;
        norm_points.push(normalize(&x, &bounds_f));
        raw_points.push(x);
        values.push(y);
    }

    for _ in 0..cfg.iterations {
        let next = match Surrogate::fit(&norm_points, &values) {
            Some(gp) => {
                let mut best_candidate: Option<(f64, Vec<f64>)> = None;
                for _ in 0..cfg.candidates {
                    let c = sample_point(&mut rng, &bounds_f);
                    let ei = gp.expected_improvement(&normalize(&c, &bounds_f));
                    if best_candidate.as_ref().map_or(true, |(b, _)| ei > *b) {
                        best_candidate = Some((ei, c));
                    }
                }
                best_candidate.expect("candidates >= 1").1
            }
            // Ill-conditioned surrogate: fall back to a random probe rather
            // than stopping the search.
            None => sample_point(&mut rng, &bounds_f),
        };
        let y = evaluate(&next, values.len())?;
        norm_points.push(normalize(&next, &bounds_f));
        raw_points.push(next);
        values.push(y);
    }

    let mut best = 0usize;
    for (i, y) in values.iter().enumerate() {
        if *y > values[best] {
            best = i;
        }
    }
    Ok(BayesOptResult {
        point: raw_points[best].iter().map(|v| S::of(*v)).collect(),
        value: S::of(values[best]),
        evaluations: values.len(),
    })
}

//! Least-squares fit of the condition index against disease quantities,
//! solved through the normal equations.

use std::collections::BTreeMap;

use super::ForecastError;
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;

/// `pci ~= intercept + weights . features`, clamped to the 0..=100 index
/// scale at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrModel<S: Scalar> {
    pub intercept: S,
    pub weights: Vec<S>,
}

impl<S: Scalar> MlrModel<S> {
    pub fn features(&self) -> usize {
        self.weights.len()
    }

    /// Raw affine prediction, without the index clamp.
    pub fn raw(&self, features: &[S]) -> S {
        self.intercept + linalg::dot(&self.weights, features)
    }
}

/// Fits by solving `(X^T X) beta = X^T y` with an intercept column. Needs
/// strictly more rows than unknowns; a collinear design comes back as
/// [`ForecastError::RankDeficient`] naming the offending column.
pub fn fit_mlr<S: Scalar>(rows: &[Vec<S>], targets: &[S]) -> Result<MlrModel<S>, ForecastError> {
    if rows.len() != targets.len() {
        return Err(ForecastError::LengthMismatch {
            left: rows.len(),
            right: targets.len(),
        });
    }
    let features = rows.first().map_or(0, Vec::len);
    if rows.len() <= features {
        return Err(ForecastError::TooFewRows {
            rows: rows.len(),
            features,
        });
    }
    for row in rows {
        if row.len() != features {
            return Err(ForecastError::DimensionMismatch {
                expected: features,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite {
                place: "regression inputs".into(),
            });
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite {
            place: "regression targets".into(),
        });
    }

    // Augmented design: column 0 is the intercept.
    let k = features + 1;
    let mut xtx = Matrix::<S>::zeros(k, k);
    let mut xty = vec![S::zero(); k];
    let mut augmented = vec![S::zero(); k];
    for (row, y) in rows.iter().zip(targets) {
        augmented[0] = S::one();
        augmented[1..].copy_from_slice(row);
        xtx.add_outer(&augmented, &augmented);
        for (acc, v) in xty.iter_mut().zip(&augmented) {
            *acc += *v * *y;
        }
    }

    let beta = linalg::solve(&xtx, &xty).map_err(|sc| ForecastError::RankDeficient {
        column: if sc.0 == 0 {
            "the intercept column".to_string()
        } else {
            format!("feature column {}", sc.0 - 1)
        },
    })?;
    Ok(MlrModel {
        intercept: beta[0],
        weights: beta[1..].to_vec(),
    })
}

/// Applies the model to per-year disease forecasts.
///
/// `codes` gives the feature order used at fit time; every code must be
/// present in `forecasts` with the same number of years. Each prediction is
/// clamped to the valid index range 0..=100.
pub fn predict_pci<S: Scalar>(
    model: &MlrModel<S>,
    codes: &[String],
    forecasts: &BTreeMap<String, Vec<S>>,
) -> Result<Vec<S>, ForecastError> {
    if codes.len() != model.weights.len() {
        return Err(ForecastError::FeatureMismatch {
            message: format!(
                "model was fit on {} feature(s) but {} code(s) were supplied",
                model.weights.len(),
                codes.len()
            ),
        });
    }
    let mut columns = Vec::with_capacity(codes.len());
    for code in codes {
        let values = forecasts
            .get(code)
            .ok_or_else(|| ForecastError::MissingFeature { code: code.clone() })?;
        columns.push(values.as_slice());
    }
    let horizon = columns.first().map_or(0, |c| c.len());
    for (code, col) in codes.iter().zip(&columns) {
        if col.len() != horizon {
            return Err(ForecastError::FeatureMismatch {
                message: format!(
                    "forecast for `{code}` spans {} year(s), expected {horizon}",
                    col.len()
                ),
            });
        }
    }

    let hundred = S::of(100.0);
    let mut out = Vec::with_capacity(horizon);
    let mut features = vec![S::zero(); codes.len()];
    for t in 0..horizon {
        for (slot, col) in features.iter_mut().zip(&columns) {
            *slot = col[t];
        }
        out.push(model.raw(&features).max(S::zero()).min(hundred));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ssr(model: &MlrModel<f64>, rows: &[Vec<f64>], targets: &[f64]) -> f64 {
        rows.iter()
            .zip(targets)
            .map(|(r, y)| {
                let d = model.raw(r) - y;
                d * d
            })
            .sum()
    }

    #[test]
    fn recovers_exact_affine_relationship() {
        // y = 2 + 3c, noiseless.
        let rows: Vec<Vec<f64>> = (0..5).map(|c| vec![c as f64]).collect();
        let targets: Vec<f64> = (0..5).map(|c| 2.0 + 3.0 * c as f64).collect();
        let model = fit_mlr(&rows, &targets).unwrap();
        assert!((model.intercept - 2.0).abs() < 1e-9);
        assert!((model.weights[0] - 3.0).abs() < 1e-9);
        assert!(ssr(&model, &rows, &targets) < 1e-12);
    }

    #[test]
    fn normal_equations_zero_the_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| 40.0 + 2.0 * r[0] - 1.5 * r[1] + 0.25 * r[2] + rng.gen_range(-1.0..1.0))
            .collect();
        let model = fit_mlr(&rows, &targets).unwrap();

        // Gradient of the SSR at the solution: -2 X^T (y - X beta).
        let mut grad = vec![0.0f64; 4];
        for (row, y) in rows.iter().zip(&targets) {
            let resid = y - model.raw(row);
            grad[0] -= 2.0 * resid;
            for (g, v) in grad[1..].iter_mut().zip(row) {
                *g -= 2.0 * resid * v;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let y_norm_sq = targets.iter().map(|y| y * y).sum::<f64>();
        assert!(norm < 1e-8 * y_norm_sq, "gradient norm {norm}");
    }

    #[test]
    fn beats_a_brute_force_grid_on_one_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen_range(0.0..10.0)]).collect();
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| 90.0 - 4.0 * r[0] + rng.gen_range(-2.0..2.0))
            .collect();
        let model = fit_mlr(&rows, &targets).unwrap();
        let fitted = ssr(&model, &rows, &targets);
        for di in -50..=50 {
            for dw in -50..=50 {
                let probe = MlrModel {
                    intercept: model.intercept + di as f64 * 0.01,
                    weights: vec![model.weights[0] + dw as f64 * 0.01],
                };
                assert!(ssr(&probe, &rows, &targets) + 1e-9 >= fitted);
            }
        }
    }

    #[test]
    fn duplicate_column_names_the_culprit() {
        let rows: Vec<Vec<f64>> = (0..6).map(|c| vec![c as f64, c as f64]).collect();
        let targets: Vec<f64> = (0..6).map(|c| 1.0 + c as f64).collect();
        let err = fit_mlr(&rows, &targets).unwrap_err();
        match err {
            ForecastError::RankDeficient { column } => {
                assert_eq!(column, "feature column 1");
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn needs_strictly_more_rows_than_features() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let targets = vec![1.0, 2.0];
        assert!(matches!(
            fit_mlr(&rows, &targets),
            Err(ForecastError::TooFewRows { rows: 2, features: 2 })
        ));
        // n = k + 1 is a square (interpolating) system and is allowed.
        let rows: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0]];
        let model = fit_mlr(&rows, &[2.0, 5.0]).unwrap();
        assert!((model.intercept - 2.0).abs() < 1e-9);
        assert!((model.weights[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn predictions_clamp_to_the_index_scale() {
        let model = MlrModel {
            intercept: 50.0,
            weights: vec![-30.0],
        };
        let codes = vec!["d".to_string()];
        let forecasts: BTreeMap<String, Vec<f64>> =
            [("d".to_string(), vec![0.0, 3.0, -2.0])].into_iter().collect();
        let out = predict_pci(&model, &codes, &forecasts).unwrap();
        assert_eq!(out[0], 50.0);
        assert_eq!(out[1], 0.0, "50 - 90 clamps to 0 exactly");
        assert_eq!(out[2], 100.0, "50 + 60 clamps to 100 exactly");
    }

    #[test]
    fn prediction_validates_codes_and_lengths() {
        let model = MlrModel {
            intercept: 1.0,
            weights: vec![1.0, 1.0],
        };
        let codes = vec!["a".to_string(), "b".to_string()];
        let missing: BTreeMap<String, Vec<f64>> =
            [("a".to_string(), vec![1.0])].into_iter().collect();
        assert!(matches!(
            predict_pci(&model, &codes, &missing),
            Err(ForecastError::MissingFeature { code }) if code == "b"
        ));

        let ragged: BTreeMap<String, Vec<f64>> = [
            ("a".to_string(), vec![1.0, 2.0]),
            ("b".to_string(), vec![1.0]),
        ]
        .into_iter()
        .collect();
        assert!(matches!(
            predict_pci(&model, &codes, &ragged),
            Err(ForecastError::FeatureMismatch { .. })
        ));

        assert!(matches!(
            predict_pci(&model, &codes[..1].to_vec(), &missing),
            Err(ForecastError::FeatureMismatch { .. })
        ));
    }

    #[test]
    fn f32_fit_tracks_f64_on_benign_data() {
        let rows64: Vec<Vec<f64>> = (0..10).map(|c| vec![c as f64]).collect();
        let targets64: Vec<f64> = (0..10).map(|c| 5.0 + 0.5 * c as f64).collect();
        let rows32: Vec<Vec<f32>> = rows64.iter().map(|r| vec![r[0] as f32]).collect();
        let targets32: Vec<f32> = targets64.iter().map(|y| *y as f32).collect();
        let m64 = fit_mlr(&rows64, &targets64).unwrap();
        let m32 = fit_mlr(&rows32, &targets32).unwrap();
        assert!((m64.intercept - m32.intercept as f64).abs() < 1e-3);
        assert!((m64.weights[0] - m32.weights[0] as f64).abs() < 1e-3);
    }
}

//! A small LSTM trained with full backpropagation through time.
//!
//! One network per route: the input at each step is the vector of selected
//! disease quantities for one year (min-max scaled), and the network learns
//! to emit the next year's vector. Forecasts beyond one year feed predictions
//! back in recursively.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ForecastError;
use crate::domain::RouteSeries;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Gate weights for a single-layer LSTM plus a dense readout.
///
/// Shapes: each `w_*` is hidden x input, each `u_*` hidden x hidden, each
/// `b_*` hidden; `w_y` is output x hidden, `b_y` output. The flat parameter
/// vector returned by [`params`](Self::params) concatenates them in exactly
/// that declaration order (f, i, g, o, then the readout), which the
/// finite-difference tests rely on.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<S: Scalar> {
    input: usize,
    hidden: usize,
    output: usize,
    w_f: Matrix<S>,
    u_f: Matrix<S>,
    b_f: Vec<S>,
    w_i: Matrix<S>,
    u_i: Matrix<S>,
    b_i: Vec<S>,
    w_g: Matrix<S>,
    u_g: Matrix<S>,
    b_g: Vec<S>,
    w_o: Matrix<S>,
    u_o: Matrix<S>,
    b_o: Vec<S>,
    w_y: Matrix<S>,
    b_y: Vec<S>,
}

impl<S: Scalar> LstmParams<S> {
    /// All parameters drawn uniformly from [-0.1, 0.1).
    pub fn new(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        assert!(input >= 1 && hidden >= 1 && output >= 1, "zero-sized layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize| {
            Matrix::from_fn(r, c, |_, _| S::of(rng.gen_range(-0.1..0.1)))
        };
        let w_f = draw(hidden, input);
        let u_f = draw(hidden, hidden);
        let b_f: Vec<S> = draw(hidden, 1).as_slice().to_vec();
        let w_i = draw(hidden, input);
        let u_i = draw(hidden, hidden);
        let b_i = draw(hidden, 1).as_slice().to_vec();
        let w_g = draw(hidden, input);
        let u_g = draw(hidden, hidden);
        let b_g = draw(hidden, 1).as_slice().to_vec();
        let w_o = draw(hidden, input);
        let u_o = draw(hidden, hidden);
        let b_o = draw(hidden, 1).as_slice().to_vec();
        let w_y = draw(output, hidden);
        let b_y = draw(output, 1).as_slice().to_vec();
        Self {
            input,
            hidden,
            output,
            w_f,
            u_f,
            b_f,
            w_i,
            u_i,
            b_i,
            w_g,
            u_g,
            b_g,
            w_o,
            u_o,
            b_o,
            w_y,
            b_y,
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        assert!(input >= 1 && hidden >= 1 && output >= 1, "zero-sized layer");
        Self {
            input,
            hidden,
            output,
            w_f: Matrix::zeros(hidden, input),
            u_f: Matrix::zeros(hidden, hidden),
            b_f: vec![S::zero(); hidden],
            w_i: Matrix::zeros(hidden, input),
            u_i: Matrix::zeros(hidden, hidden),
            b_i: vec![S::zero(); hidden],
            w_g: Matrix::zeros(hidden, input),
            u_g: Matrix::zeros(hidden, hidden),
            b_g: vec![S::zero(); hidden],
            w_o: Matrix::zeros(hidden, input),
            u_o: Matrix::zeros(hidden, hidden),
            b_o: vec![S::zero(); hidden],
            w_y: Matrix::zeros(output, hidden),
            b_y: vec![S::zero(); output],
        }
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn param_count(&self) -> usize {
        4 * (self.hidden * self.input + self.hidden * self.hidden + self.hidden)
            + self.output * self.hidden
            + self.output
    }

    /// Flattened view of every parameter, in declaration order.
    pub fn params(&self) -> Vec<S> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, u, b) in [
            (&self.w_f, &self.u_f, &self.b_f),
            (&self.w_i, &self.u_i, &self.b_i),
            (&self.w_g, &self.u_g, &self.b_g),
            (&self.w_o, &self.u_o, &self.b_o),
        ] {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(u.as_slice());
            flat.extend_from_slice(b);
        }
        flat.extend_from_slice(self.w_y.as_slice());
        flat.extend_from_slice(&self.b_y);
        flat
    }

    /// Inverse of [`params`](Self::params).
    pub fn set_params(&mut self, flat: &[S]) -> Result<(), ForecastError> {
        if flat.len() != self.param_count() {
            return Err(ForecastError::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut at = 0usize;
        let mut take = |dst: &mut [S]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        for (w, u, b) in [
            (&mut self.w_f, &mut self.u_f, &mut self.b_f),
            (&mut self.w_i, &mut self.u_i, &mut self.b_i),
            (&mut self.w_g, &mut self.u_g, &mut self.b_g),
            (&mut self.w_o, &mut self.u_o, &mut self.b_o),
        ] {
            take(w.as_mut_slice());
            take(u.as_mut_slice());
            take(b);
        }
        take(self.w_y.as_mut_slice());
        take(&mut self.b_y);
        Ok(())
    }

    /// Gradient-descent update `theta -= lr * grad`.
    pub fn apply_step(&mut self, grads: &LstmParams<S>, lr: S) -> Result<(), ForecastError> {
        let mut flat = self.params();
        let g = grads.params();
        if g.len() != flat.len() {
            return Err(ForecastError::DimensionMismatch {
                expected: flat.len(),
                got: g.len(),
            });
        }
        for (p, d) in flat.iter_mut().zip(&g) {
            *p -= lr * *d;
        }
        self.set_params(&flat)
    }
}

struct StepCache<S> {
    x: Vec<S>,
    h_prev: Vec<S>,
    c_prev: Vec<S>,
    f: Vec<S>,
    i: Vec<S>,
    g: Vec<S>,
    o: Vec<S>,
    c: Vec<S>,
    tanh_c: Vec<S>,
    h: Vec<S>,
}

fn gate<S: Scalar>(w: &Matrix<S>, u: &Matrix<S>, b: &[S], x: &[S], h_prev: &[S]) -> Vec<S> {
    let mut pre = w.matvec(x);
    let rec = u.matvec(h_prev);
    for (p, (r, bias)) in pre.iter_mut().zip(rec.iter().zip(b)) {
        *p += *r + *bias;
    }
    pre
}

fn step_cached<S: Scalar>(p: &LstmParams<S>, x: &[S], h_prev: &[S], c_prev: &[S]) -> StepCache<S> {
    let f: Vec<S> = gate(&p.w_f, &p.u_f, &p.b_f, x, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let i: Vec<S> = gate(&p.w_i, &p.u_i, &p.b_i, x, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let g: Vec<S> = gate(&p.w_g, &p.u_g, &p.b_g, x, h_prev)
        .into_iter()
        .map(|v| v.tanh())
        .collect();
    let o: Vec<S> = gate(&p.w_o, &p.u_o, &p.b_o, x, h_prev)
        .into_iter()
        .map(sigmoid)
        .collect();
    let c: Vec<S> = (0..p.hidden)
        .map(|k| f[k] * c_prev[k] + i[k] * g[k])
        .collect();
    let tanh_c: Vec<S> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<S> = (0..p.hidden).map(|k| o[k] * tanh_c[k]).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        f,
        i,
        g,
        o,
        c,
        tanh_c,
        h,
    }
}

/// One LSTM cell update. Returns the new `(hidden, cell)` state.
pub fn lstm_step<S: Scalar>(
    p: &LstmParams<S>,
    x: &[S],
    h_prev: &[S],
    c_prev: &[S],
) -> Result<(Vec<S>, Vec<S>), ForecastError> {
    if x.len() != p.input {
        return Err(ForecastError::DimensionMismatch {
            expected: p.input,
            got: x.len(),
        });
    }
    if h_prev.len() != p.hidden || c_prev.len() != p.hidden {
        return Err(ForecastError::DimensionMismatch {
            expected: p.hidden,
            got: if h_prev.len() != p.hidden {
                h_prev.len()
            } else {
                c_prev.len()
            },
        });
    }
    let cache = step_cached(p, x, h_prev, c_prev);
    Ok((cache.h, cache.c))
}

/// Dense readout `y = W_y h + b_y`.
pub fn dense<S: Scalar>(p: &LstmParams<S>, h: &[S]) -> Result<Vec<S>, ForecastError> {
    if h.len() != p.hidden {
        return Err(ForecastError::DimensionMismatch {
            expected: p.hidden,
            got: h.len(),
        });
    }
    let mut y = p.w_y.matvec(h);
    for (v, b) in y.iter_mut().zip(&p.b_y) {
        *v += *b;
    }
    Ok(y)
}

/// A training example: `window` consecutive rows and the row that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<S: Scalar> {
    pub inputs: Vec<Vec<S>>,
    pub target: Vec<S>,
}

/// Slices a row-per-year series into sliding windows. A series of `t` rows
/// yields `t - window` examples, so it must hold at least `window + 1` rows.
pub fn make_windows<S: Scalar>(
    rows: &[Vec<S>],
    window: usize,
) -> Result<Vec<Window<S>>, ForecastError> {
    if window == 0 {
        return Err(ForecastError::ZeroWindow);
    }
    if rows.len() <= window {
        return Err(ForecastError::WindowTooLarge {
            rows: rows.len(),
            window,
        });
    }
    let width = rows[0].len();
    for row in rows {
        if row.len() != width {
            return Err(ForecastError::DimensionMismatch {
                expected: width,
                got: row.len(),
            });
        }
    }
    Ok((0..rows.len() - window)
        .map(|s| Window {
            inputs: rows[s..s + window].to_vec(),
            target: rows[s + window].clone(),
        })
        .collect())
}

fn validate_windows<S: Scalar>(
    p: &LstmParams<S>,
    windows: &[Window<S>],
) -> Result<(), ForecastError> {
    for w in windows {
        for x in &w.inputs {
            if x.len() != p.input {
                return Err(ForecastError::DimensionMismatch {
                    expected: p.input,
                    got: x.len(),
                });
            }
        }
        if w.target.len() != p.output {
            return Err(ForecastError::DimensionMismatch {
                expected: p.output,
                got: w.target.len(),
            });
        }
    }
    Ok(())
}

fn forward_final_h<S: Scalar>(p: &LstmParams<S>, inputs: &[Vec<S>]) -> Vec<S> {
    let mut h = vec![S::zero(); p.hidden];
    let mut c = vec![S::zero(); p.hidden];
    for x in inputs {
        let cache = step_cached(p, x, &h, &c);
        h = cache.h;
        c = cache.c;
    }
    h
}

/// Sum of squared residuals of the readout over every window.
pub fn ssr_loss<S: Scalar>(p: &LstmParams<S>, windows: &[Window<S>]) -> Result<S, ForecastError> {
    validate_windows(p, windows)?;
    let mut loss = S::zero();
    for w in windows {
        let h = forward_final_h(p, &w.inputs);
        let y = dense(p, &h)?;
        for (a, t) in y.iter().zip(&w.target) {
            let d = *a - *t;
            loss += d * d;
        }
    }
    Ok(loss)
}

/// Loss and its exact gradient via backpropagation through time.
///
/// The gradient comes back in another [`LstmParams`] so callers can flatten
/// it with the same `params()` layout or feed it to
/// [`LstmParams::apply_step`].
pub fn ssr_loss_and_grads<S: Scalar>(
    p: &LstmParams<S>,
    windows: &[Window<S>],
) -> Result<(S, LstmParams<S>), ForecastError> {
    validate_windows(p, windows)?;
    let mut grads = LstmParams::zeros(p.input, p.hidden, p.output);
    let mut loss = S::zero();
    let two = S::of(2.0);

    for w in windows {
        let mut h = vec![S::zero(); p.hidden];
        let mut c = vec![S::zero(); p.hidden];
        let mut caches = Vec::with_capacity(w.inputs.len());
        for x in &w.inputs {
            let cache = step_cached(p, x, &h, &c);
            h.copy_from_slice(&cache.h);
            c.copy_from_slice(&cache.c);
            caches.push(cache);
        }
        let last_h = &caches.last().expect("windows hold at least one step").h;
        let y = dense(p, last_h)?;

        let mut dy = Vec::with_capacity(p.output);
        for (a, t) in y.iter().zip(&w.target) {
            let d = *a - *t;
            loss += d * d;
            dy.push(two * d);
        }
        grads.w_y.add_outer(&dy, last_h);
        for (b, d) in grads.b_y.iter_mut().zip(&dy) {
            *b += *d;
        }

        let mut dh = p.w_y.matvec_t(&dy);
        let mut dc = vec![S::zero(); p.hidden];
        let mut da_f = vec![S::zero(); p.hidden];
        let mut da_i = vec![S::zero(); p.hidden];
        let mut da_g = vec![S::zero(); p.hidden];
        let mut da_o = vec![S::zero(); p.hidden];
        for cache in caches.iter().rev() {
            for k in 0..p.hidden {
                let tc = cache.tanh_c[k];
                dc[k] += dh[k] * cache.o[k] * (S::one() - tc * tc);
                let d_o = dh[k] * tc;
                let d_f = dc[k] * cache.c_prev[k];
                let d_i = dc[k] * cache.g[k];
                let d_g = dc[k] * cache.i[k];
                da_f[k] = d_f * cache.f[k] * (S::one() - cache.f[k]);
                da_i[k] = d_i * cache.i[k] * (S::one() - cache.i[k]);
                da_g[k] = d_g * (S::one() - cache.g[k] * cache.g[k]);
                da_o[k] = d_o * cache.o[k] * (S::one() - cache.o[k]);
            }
            grads.w_f.add_outer(&da_f, &cache.x);
            grads.u_f.add_outer(&da_f, &cache.h_prev);
            grads.w_i.add_outer(&da_i, &cache.x);
            grads.u_i.add_outer(&da_i, &cache.h_prev);
            grads.w_g.add_outer(&da_g, &cache.x);
            grads.u_g.add_outer(&da_g, &cache.h_prev);
            grads.w_o.add_outer(&da_o, &cache.x);
            grads.u_o.add_outer(&da_o, &cache.h_prev);
            for k in 0..p.hidden {
                grads.b_f[k] += da_f[k];
                grads.b_i[k] += da_i[k];
                grads.b_g[k] += da_g[k];
                grads.b_o[k] += da_o[k];
            }

            let mut dh_prev = p.u_f.matvec_t(&da_f);
            for (acc, v) in dh_prev.iter_mut().zip(p.u_i.matvec_t(&da_i)) {
                *acc += v;
            }
            for (acc, v) in dh_prev.iter_mut().zip(p.u_g.matvec_t(&da_g)) {
                *acc += v;
            }
            for (acc, v) in dh_prev.iter_mut().zip(p.u_o.matvec_t(&da_o)) {
                *acc += v;
            }
            for k in 0..p.hidden {
                dc[k] *= cache.f[k];
            }
            dh = dh_prev;
        }
    }
    Ok((loss, grads))
}

/// Per-column min-max scaling to [0, 1]. Constant columns map to 0 and come
/// back unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler<S: Scalar> {
    mins: Vec<S>,
    ranges: Vec<S>,
}

impl<S: Scalar> MinMaxScaler<S> {
    pub fn fit(rows: &[Vec<S>]) -> Result<Self, ForecastError> {
        if rows.is_empty() {
            return Err(ForecastError::TooFewPoints { needed: 1, got: 0 });
        }
        let width = rows[0].len();
        let mut mins = rows[0].clone();
        let mut maxs = rows[0].clone();
        for row in rows {
            if row.len() != width {
                return Err(ForecastError::DimensionMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            for (k, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ForecastError::NonFinite {
                        place: format!("column {k} of the scaling input"),
                    });
                }
                mins[k] = mins[k].min(*v);
                maxs[k] = maxs[k].max(*v);
            }
        }
        let ranges = mins.iter().zip(&maxs).map(|(lo, hi)| *hi - *lo).collect();
        Ok(Self { mins, ranges })
    }

    pub fn width(&self) -> usize {
        self.mins.len()
    }

    pub fn scale_row(&self, row: &[S]) -> Vec<S> {
        assert_eq!(row.len(), self.mins.len());
        row.iter()
            .enumerate()
            .map(|(k, v)| {
                if self.ranges[k] == S::zero() {
                    S::zero()
                } else {
                    (*v - self.mins[k]) / self.ranges[k]
                }
            })
            .collect()
    }

    pub fn unscale_row(&self, row: &[S]) -> Vec<S> {
        assert_eq!(row.len(), self.mins.len());
        row.iter()
            .enumerate()
            .map(|(k, v)| self.mins[k] + *v * self.ranges[k])
            .collect()
    }
}

/// Hidden-layer sizing: either pinned, or picked from candidates by held-out
/// loss on the final window.
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenChoice {
    Fixed(usize),
    Select(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct LstmTrainConfig {
    pub learning_rate: f64,
    pub window: usize,
    pub epochs: usize,
    pub hidden: HiddenChoice,
    /// Epoch span for the early-stop check; 0 disables early stopping.
    pub patience: usize,
    /// Stop once the loss improves by less than this over `patience` epochs.
    pub min_improvement: f64,
    pub seed: u64,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            window: 3,
            epochs: 2000,
            hidden: HiddenChoice::Select(vec![32, 64, 128]),
            patience: 100,
            min_improvement: 1e-6,
            seed: 0,
        }
    }
}

/// A trained forecaster together with everything needed to apply it.
#[derive(Debug, Clone)]
pub struct TrainedLstm<S: Scalar> {
    pub params: LstmParams<S>,
    pub scaler: MinMaxScaler<S>,
    /// Feature order of the input/output vectors.
    pub codes: Vec<String>,
    pub window: usize,
    /// Training loss per epoch of the final fit.
    pub loss_trace: Vec<S>,
    /// `(hidden size, held-out SSR)` per candidate when selection ran.
    pub validation: Vec<(usize, S)>,
}

fn train_core<S: Scalar>(
    windows: &[Window<S>],
    input: usize,
    hidden: usize,
    cfg: &LstmTrainConfig,
) -> Result<(LstmParams<S>, Vec<S>), ForecastError> {
    let mut params = LstmParams::new(input, hidden, input, cfg.seed);
    let lr = S::of(cfg.learning_rate);
    let mut trace: Vec<S> = Vec::new();
    for epoch in 0..cfg.epochs {
        let (loss, grads) = ssr_loss_and_grads(&params, windows)?;
        if !loss.is_finite() {
            return Err(ForecastError::Diverged { epoch });
        }
        trace.push(loss);
        if cfg.patience > 0 && trace.len() > cfg.patience {
            let before = trace[trace.len() - 1 - cfg.patience];
            if (before - loss).as_f64() < cfg.min_improvement {
                break;
            }
        }
        params.apply_step(&grads, lr)?;
    }
    Ok((params, trace))
}

/// Fits a forecaster on the full yearly history of `series` restricted to
/// `codes`. With [`HiddenChoice::Select`], every candidate size is trained on
/// all windows but the last and scored on that held-out window; the best one
/// is then retrained on everything.
pub fn train_lstm<S: Scalar>(
    series: &RouteSeries,
    codes: &[String],
    cfg: &LstmTrainConfig,
) -> Result<TrainedLstm<S>, ForecastError> {
    if codes.is_empty() {
        return Err(ForecastError::EmptySelection);
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(ForecastError::InvalidConfig {
            message: format!("learning rate {} is not positive", cfg.learning_rate),
        });
    }
    if cfg.epochs == 0 {
        return Err(ForecastError::InvalidConfig {
            message: "epochs must be at least 1".into(),
        });
    }

    let rows = feature_rows::<S>(series, codes)?;
    let scaler = MinMaxScaler::fit(&rows)?;
    let scaled: Vec<Vec<S>> = rows.iter().map(|r| scaler.scale_row(r)).collect();
    let windows = make_windows(&scaled, cfg.window)?;

    let (hidden, validation) = match &cfg.hidden {
        HiddenChoice::Fixed(h) => {
            if *h == 0 {
                return Err(ForecastError::InvalidConfig {
                    message: "hidden size must be at least 1".into(),
                });
            }
            (*h, Vec::new())
        }
        HiddenChoice::Select(cands) => {
            if cands.is_empty() || cands.contains(&0) {
                return Err(ForecastError::InvalidConfig {
                    message: "hidden-size candidates must be a non-empty list of sizes >= 1"
                        .into(),
                });
            }
            if windows.len() < 2 {
                // Nothing to hold out; fall back to the first candidate.
                (cands[0], Vec::new())
            } else {
                let (fit, held_out) = windows.split_at(windows.len() - 1);
                let mut scores = Vec::with_capacity(cands.len());
                let mut best = cands[0];
                let mut best_ssr = S::infinity();
                for &h in cands {
                    let (trial, _) = train_core(fit, codes.len(), h, cfg)?;
                    let ssr = ssr_loss(&trial, held_out)?;
                    scores.push((h, ssr));
                    if ssr < best_ssr {
                        best_ssr = ssr;
                        best = h;
                    }
                }
                (best, scores)
            }
        }
    };

    let (params, loss_trace) = train_core(&windows, codes.len(), hidden, cfg)?;
    Ok(TrainedLstm {
        params,
        scaler,
        codes: codes.to_vec(),
        window: cfg.window,
        loss_trace,
        validation,
    })
}

fn feature_rows<S: Scalar>(
    series: &RouteSeries,
    codes: &[String],
) -> Result<Vec<Vec<S>>, ForecastError> {
    let mut columns = Vec::with_capacity(codes.len());
    for code in codes {
        let values = series
            .diseases
            .get(code)
            .ok_or_else(|| ForecastError::MissingFeature { code: code.clone() })?;
        columns.push(values);
    }
    Ok((0..series.len())
        .map(|t| columns.iter().map(|col| S::of(col[t])).collect())
        .collect())
}

/// Rolls the network forward `horizon` years past the end of `series`.
///
/// Each predicted vector is clamped to be non-negative (disease quantities
/// cannot go below zero) before it is fed back in for the next year.
pub fn forecast_diseases<S: Scalar>(
    model: &TrainedLstm<S>,
    series: &RouteSeries,
    horizon: usize,
) -> Result<BTreeMap<String, Vec<S>>, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    let rows = feature_rows::<S>(series, &model.codes)?;
    if rows.len() < model.window {
        return Err(ForecastError::WindowTooLarge {
            rows: rows.len(),
            window: model.window,
        });
    }
    let mut buffer: Vec<Vec<S>> = rows[rows.len() - model.window..]
        .iter()
        .map(|r| model.scaler.scale_row(r))
        .collect();

    let mut out: BTreeMap<String, Vec<S>> = model
        .codes
        .iter()
        .map(|c| (c.clone(), Vec::with_capacity(horizon)))
        .collect();
    for _ in 0..horizon {
        let h = forward_final_h(&model.params, &buffer);
        let y = dense(&model.params, &h)?;
        let clamped: Vec<S> = model
            .scaler
            .unscale_row(&y)
            .into_iter()
            .map(|v| v.max(S::zero()))
            .collect();
        for (code, v) in model.codes.iter().zip(&clamped) {
            out.get_mut(code).expect("code inserted above").push(*v);
        }
        buffer.remove(0);
        buffer.push(model.scaler.scale_row(&clamped));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params(values: &[f64]) -> LstmParams<f64> {
        // input = hidden = output = 1, so the flat layout is
        // [w_f, u_f, b_f, w_i, u_i, b_i, w_g, u_g, b_g, w_o, u_o, b_o, w_y, b_y].
        let mut p = LstmParams::zeros(1, 1, 1);
        p.set_params(values).unwrap();
        p
    }

    #[test]
    fn all_ones_step_matches_hand_computation() {
        // Every weight and bias 1, x = 1, zero state: each gate input is 2,
        // so c = sigmoid(2) * tanh(2) and h = sigmoid(2) * tanh(c).
        let p = unit_params(&[1.0; 14]);
        let (h, c) = lstm_step(&p, &[1.0], &[0.0], &[0.0]).unwrap();
        assert!((c[0] - 0.8491).abs() < 1e-4, "c = {}", c[0]);
        assert!((h[0] - 0.6083).abs() < 1e-4, "h = {}", h[0]);
    }

    #[test]
    fn zero_params_halve_the_cell_state() {
        let p = LstmParams::<f64>::zeros(1, 1, 1);
        let (h, c) = lstm_step(&p, &[3.0], &[0.5], &[0.4]).unwrap();
        // All gate pre-activations are 0: f = i = o = 0.5, g = 0.
        assert!((c[0] - 0.2).abs() < 1e-12);
        assert!((h[0] - 0.5 * 0.2f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn huge_negative_forget_bias_detaches_the_cell() {
        let mut values = [1.0; 14];
        values[2] = -1e9; // b_f
        let p = unit_params(&values);
        let (_, c_from_zero) = lstm_step(&p, &[1.0], &[0.0], &[0.0]).unwrap();
        let (_, c_from_five) = lstm_step(&p, &[1.0], &[0.0], &[5.0]).unwrap();
        assert!((c_from_zero[0] - c_from_five[0]).abs() < 1e-12);
    }

    #[test]
    fn gates_stay_in_range_for_random_inputs() {
        let p = LstmParams::<f64>::new(3, 4, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut h = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let cache = step_cached(&p, &x, &h, &c);
            for k in 0..4 {
                assert!(cache.f[k] > 0.0 && cache.f[k] < 1.0);
                assert!(cache.i[k] > 0.0 && cache.i[k] < 1.0);
                assert!(cache.o[k] > 0.0 && cache.o[k] < 1.0);
                assert!(cache.g[k] > -1.0 && cache.g[k] < 1.0);
                assert!(cache.h[k] > -1.0 && cache.h[k] < 1.0);
                assert!(cache.c[k].is_finite());
            }
            h = cache.h;
            c = cache.c;
        }
    }

    #[test]
    fn dense_readout_is_affine() {
        let p = unit_params(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 1.0]);
        let y = dense(&p, &[0.5]).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn window_counts() {
        let rows = |n: usize| (0..n).map(|t| vec![t as f64, 1.0]).collect::<Vec<_>>();
        assert_eq!(make_windows(&rows(9), 3).unwrap().len(), 6);
        let single = make_windows(&rows(4), 3).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].inputs.len(), 3);
        assert_eq!(single[0].target, vec![3.0, 1.0]);
        assert!(matches!(
            make_windows(&rows(3), 3),
            Err(ForecastError::WindowTooLarge { rows: 3, window: 3 })
        ));
        assert!(matches!(
            make_windows(&rows(5), 0),
            Err(ForecastError::ZeroWindow)
        ));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(matches!(
            make_windows(&rows, 1),
            Err(ForecastError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn bptt_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let windows = make_windows(&rows, 2).unwrap();
        let p = LstmParams::<f64>::new(2, 3, 2, 5);
        let (_, grads) = ssr_loss_and_grads(&p, &windows).unwrap();
        let analytic = grads.params();

        let step = 1e-5;
        let theta = p.params();
        let mut worst = 0.0f64;
        for k in 0..theta.len() {
            let mut probe = p.clone();
            let mut plus = theta.clone();
            plus[k] += step;
            probe.set_params(&plus).unwrap();
            let up = ssr_loss(&probe, &windows).unwrap();
            let mut minus = theta.clone();
            minus[k] -= step;
            probe.set_params(&minus).unwrap();
            let down = ssr_loss(&probe, &windows).unwrap();
            let numeric = (up - down) / (2.0 * step);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let rows: Vec<Vec<f64>> = (0..8).map(|t| vec![0.1 + 0.1 * t as f64]).collect();
        let windows = make_windows(&rows, 3).unwrap();
        let cfg = LstmTrainConfig {
            epochs: 200,
            hidden: HiddenChoice::Fixed(4),
            patience: 0,
            ..LstmTrainConfig::default()
        };
        let (p1, trace1) = train_core(&windows, 1, 4, &cfg).unwrap();
        let (p2, trace2) = train_core(&windows, 1, 4, &cfg).unwrap();
        assert!(trace1.last().unwrap() < trace1.first().unwrap());
        assert_eq!(p1.params(), p2.params());
        assert_eq!(trace1, trace2);
    }

    #[test]
    fn early_stop_cuts_the_trace_short() {
        let rows: Vec<Vec<f64>> = (0..8).map(|t| vec![0.1 + 0.1 * t as f64]).collect();
        let windows = make_windows(&rows, 3).unwrap();
        let cfg = LstmTrainConfig {
            epochs: 2000,
            hidden: HiddenChoice::Fixed(2),
            patience: 20,
            min_improvement: 1e-3,
            ..LstmTrainConfig::default()
        };
        let (_, trace) = train_core(&windows, 1, 2, &cfg).unwrap();
        assert!(trace.len() < 2000, "stopped after {} epochs", trace.len());
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|t| vec![(t as f64 * 0.7).sin().abs(), 0.3 * t as f64])
            .collect();
        let windows = make_windows(&rows, 3).unwrap();
        let cfg = LstmTrainConfig {
            learning_rate: 1e6,
            epochs: 2000,
            hidden: HiddenChoice::Fixed(4),
            patience: 0,
            ..LstmTrainConfig::default()
        };
        assert!(matches!(
            train_core(&windows, 2, 4, &cfg),
            Err(ForecastError::Diverged { .. })
        ));
    }

    fn toy_series() -> RouteSeries {
        RouteSeries {
            route_id: "R1".into(),
            years: (2013..=2021).collect(),
            pci: (0..9).map(|t| 95.0 - 3.0 * t as f64).collect(),
            diseases: [
                ("crack".to_string(), (0..9).map(|t| 1.0 + 0.8 * t as f64).collect()),
                ("pothole".to_string(), (0..9).map(|t| 0.5 + 0.3 * t as f64).collect()),
            ]
            .into_iter()
            .collect(),
        }
    }

    #[test]
    fn hidden_selection_scores_every_candidate() {
        let series = toy_series();
        let codes = vec!["crack".to_string(), "pothole".to_string()];
        let cfg = LstmTrainConfig {
            epochs: 60,
            hidden: HiddenChoice::Select(vec![2, 4]),
            patience: 0,
            ..LstmTrainConfig::default()
        };
        let model = train_lstm::<f64>(&series, &codes, &cfg).unwrap();
        assert_eq!(model.validation.len(), 2);
        assert_eq!(model.validation[0].0, 2);
        assert_eq!(model.validation[1].0, 4);
        let best = model
            .validation
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert_eq!(model.params.hidden(), best);
    }

    #[test]
    fn train_rejects_empty_selection_and_missing_codes() {
        let series = toy_series();
        let cfg = LstmTrainConfig {
            epochs: 5,
            hidden: HiddenChoice::Fixed(2),
            ..LstmTrainConfig::default()
        };
        assert!(matches!(
            train_lstm::<f64>(&series, &[], &cfg),
            Err(ForecastError::EmptySelection)
        ));
        assert!(matches!(
            train_lstm::<f64>(&series, &["rut".to_string()], &cfg),
            Err(ForecastError::MissingFeature { code }) if code == "rut"
        ));
    }

    #[test]
    fn forecast_runs_recursively_and_stays_non_negative() {
        let series = toy_series();
        let codes = vec!["crack".to_string(), "pothole".to_string()];
        let cfg = LstmTrainConfig {
            epochs: 100,
            hidden: HiddenChoice::Fixed(4),
            ..LstmTrainConfig::default()
        };
        let model = train_lstm::<f64>(&series, &codes, &cfg).unwrap();
        let out = forecast_diseases(&model, &series, 5).unwrap();
        assert_eq!(out.len(), 2);
        for (_, values) in &out {
            assert_eq!(values.len(), 5);
            assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        assert!(matches!(
            forecast_diseases(&model, &series, 0),
            Err(ForecastError::ZeroHorizon)
        ));
    }

    #[test]
    fn constant_series_forecasts_stay_near_the_constant() {
        // A constant column has zero range: it scales to 0 and unscales back
        // to the constant, so every forecast year must sit within 5% of it.
        let c = 12.5;
        let series = RouteSeries {
            route_id: "R1".into(),
            years: (2013..=2021).collect(),
            pci: (0..9).map(|t| 95.0 - 2.0 * t as f64).collect(),
            diseases: [
                ("flat".to_string(), vec![c; 9]),
                ("trend".to_string(), (0..9).map(|t| 1.0 + t as f64).collect()),
            ]
            .into_iter()
            .collect(),
        };
        let codes = vec!["flat".to_string(), "trend".to_string()];
        let cfg = LstmTrainConfig {
            epochs: 300,
            hidden: HiddenChoice::Fixed(4),
            ..LstmTrainConfig::default()
        };
        let model = train_lstm::<f64>(&series, &codes, &cfg).unwrap();
        let out = forecast_diseases(&model, &series, 5).unwrap();
        for v in &out["flat"] {
            assert!((v - c).abs() <= 0.05 * c, "forecast {v} drifted from {c}");
        }
    }

    #[test]
    fn forecast_clamps_negative_predictions_to_zero() {
        // A zeroed network reads out b_y = -0.5 regardless of input, which
        // unscales to -5.0 and must clamp to 0.
        let mut params = LstmParams::<f64>::zeros(1, 1, 1);
        let mut flat = params.params();
        flat[13] = -0.5;
        params.set_params(&flat).unwrap();
        let series = RouteSeries {
            route_id: "R1".into(),
            years: vec![2019, 2020],
            pci: vec![80.0, 70.0],
            diseases: [("d".to_string(), vec![0.0, 10.0])].into_iter().collect(),
        };
        let rows = vec![vec![0.0f64], vec![10.0]];
        let model = TrainedLstm {
            params,
            scaler: MinMaxScaler::fit(&rows).unwrap(),
            codes: vec!["d".to_string()],
            window: 1,
            loss_trace: Vec::new(),
            validation: Vec::new(),
        };
        let out = forecast_diseases(&model, &series, 2).unwrap();
        assert_eq!(out["d"], vec![0.0, 0.0]);
    }

    #[test]
    fn params_round_trip_through_flat_vector() {
        let p = LstmParams::<f64>::new(2, 3, 2, 9);
        let flat = p.params();
        assert_eq!(flat.len(), p.param_count());
        let mut q = LstmParams::<f64>::zeros(2, 3, 2);
        q.set_params(&flat).unwrap();
        assert_eq!(p, q);
        assert!(matches!(
            LstmParams::<f64>::zeros(2, 3, 2).set_params(&flat[1..]),
            Err(ForecastError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seeded_init_stays_in_declared_band() {
        let p = LstmParams::<f64>::new(3, 5, 3, 123);
        assert!(p.params().iter().all(|v| (-0.1..0.1).contains(v)));
    }
}

//! Deep Q-learning over segment states.
//!
//! A small fully connected network (input, three hidden layers, output; five
//! layers in total) maps an encoded state to one Q-value per action. Training
//! is standard epsilon-greedy Q-learning with experience replay and a
//! periodically synced target copy, single-threaded and fully determined by
//! the seed. [`TabularEnv`] adapts a [`TabularMdp`] so the agent can be
//! checked against exact value iteration.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets::{reachable_states, transition, EffectivenessTable, StateEncoder};
use super::{reward, MdpState, RecommendError, TabularMdp, TreatmentAction};
use crate::forecast::Forecast;
use crate::linalg::Matrix;
use crate::Scalar;

/// Parameter budget the default hidden sizing aims for.
const PARAM_TARGET: f64 = 75_589.0;

/// Fully connected Q-value network: three ReLU hidden layers of equal width
/// and a linear output of one value per action.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<S> {
    /// Per layer, `out x in`.
    weights: Vec<Matrix<S>>,
    biases: Vec<Vec<S>>,
}

impl<S: Scalar> QNetwork<S> {
    /// Glorot-uniform initialized network; biases start at zero.
    pub fn new(
        input: usize,
        hidden: [usize; 3],
        actions: usize,
        seed: u64,
    ) -> Result<Self, RecommendError> {
        let sizes = [input, hidden[0], hidden[1], hidden[2], actions];
        if sizes.contains(&0) {
            return Err(RecommendError::InvalidConfig {
                message: format!("every layer needs at least one unit, got {sizes:?}"),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| {
                S::of(rng.gen_range(-limit..limit))
            }));
            biases.push(vec![S::zero(); fan_out]);
        }
        Ok(QNetwork { weights, biases })
    }

    fn zeros_like(&self) -> Self {
        QNetwork {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![S::zero(); b.len()]).collect(),
        }
    }

    /// `[input, hidden, hidden, hidden, actions]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.weights[0].cols()];
        sizes.extend(self.weights.iter().map(Matrix::rows));
        sizes
    }

    pub fn num_actions(&self) -> usize {
        self.biases.last().map_or(0, Vec::len)
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.rows() * w.cols() + b.len())
            .sum()
    }

    /// Hidden widths (equal) whose total parameter count lands nearest the
    /// conventional budget of 75,589 for this input width and action count.
    pub fn default_hidden_sizes(input: usize, actions: usize) -> [usize; 3] {
        // params(h) = 2h^2 + h(input + actions + 3) + actions
        let b = (input + actions + 3) as f64;
        let c = actions as f64;
        let h = ((-b + (b * b + 8.0 * (PARAM_TARGET - c)).sqrt()) / 4.0).round();
        let h = (h as usize).max(1);
        [h, h, h]
    }

    /// Q-values for an encoded state.
    pub fn forward(&self, input: &[S]) -> Result<Vec<S>, RecommendError> {
        if input.len() != self.weights[0].cols() {
            return Err(RecommendError::DimensionMismatch {
                expected: self.weights[0].cols(),
                got: input.len(),
            });
        }
        Ok(self.activations(input).pop().expect("output layer"))
    }

    /// Post-activation values per layer, input first, output last.
    fn activations(&self, input: &[S]) -> Vec<Vec<S>> {
        let last = self.weights.len() - 1;
        let mut acts = vec![input.to_vec()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(acts.last().expect("non-empty"));
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += *bi;
                if l < last {
                    *zi = zi.max(S::zero());
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagates an output-layer gradient through cached activations,
    /// adding parameter gradients into `grads`. ReLU uses subgradient 0 at 0.
    fn accumulate_grads(&self, acts: &[Vec<S>], output_grad: &[S], grads: &mut QNetwork<S>) {
        let mut delta = output_grad.to_vec();
        for l in (0..self.weights.len()).rev() {
            grads.weights[l].add_outer(&delta, &acts[l]);
            for (g, d) in grads.biases[l].iter_mut().zip(&delta) {
                *g += *d;
            }
            if l > 0 {
                let mut prev = self.weights[l].matvec_t(&delta);
                for (p, a) in prev.iter_mut().zip(&acts[l]) {
                    if *a <= S::zero() {
                        *p = S::zero();
                    }
                }
                delta = prev;
            }
        }
    }

    /// Flattens all parameters, layer by layer, weights row-major then bias.
    pub fn params(&self) -> Vec<S> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w.as_slice());
            flat.extend_from_slice(b);
        }
        flat
    }

    /// Inverse of [`QNetwork::params`]; the length must match exactly.
    pub fn set_params(&mut self, flat: &[S]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count mismatch");
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wn = w.rows() * w.cols();
            w.as_mut_slice().copy_from_slice(&flat[offset..offset + wn]);
            offset += wn;
            let bn = b.len();
            b.copy_from_slice(&flat[offset..offset + bn]);
            offset += bn;
        }
    }
}

/// How an environment step ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// The episode continues from the returned state.
    Continue,
    /// The episode hit its step limit; the next state still has value, so
    /// learning targets keep bootstrapping through it.
    Truncated,
    /// A true end state: nothing follows and targets stop here.
    Terminal,
}

/// What the agent trains against: episodic stepping over encoded states.
pub trait Environment<S: Scalar> {
    fn state_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Starts an episode, returning the initial encoded state.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<S>;
    /// Applies an action: `(next encoded state, reward, outcome)`.
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Vec<S>, S, StepOutcome);
}

/// Adapter exposing a [`TabularMdp`] as an environment with one-hot state
/// encoding and fixed-length episodes from uniformly random start states.
pub struct TabularEnv<'a> {
    mdp: &'a TabularMdp,
    horizon: usize,
    state: usize,
    steps: usize,
}

impl<'a> TabularEnv<'a> {
    pub fn new(mdp: &'a TabularMdp, horizon: usize) -> Self {
        TabularEnv {
            mdp,
            horizon,
            state: 0,
            steps: 0,
        }
    }

    fn encode<S: Scalar>(&self) -> Vec<S> {
        let mut x = vec![S::zero(); self.mdp.num_states()];
        x[self.state] = S::one();
        x
    }
}

impl<S: Scalar> Environment<S> for TabularEnv<'_> {
    fn state_dim(&self) -> usize {
        self.mdp.num_states()
    }

    fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<S> {
        self.state = rng.gen_range(0..self.mdp.num_states());
        self.steps = 0;
        self.encode()
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Vec<S>, S, StepOutcome) {
        let reward = self.mdp.rewards[self.state][action];
        let outcomes = &self.mdp.transitions[self.state][action];
        let mut draw = rng.gen::<f64>();
        let mut next = outcomes.last().expect("validated transitions").0;
        for &(candidate, p) in outcomes {
            if draw < p {
                next = candidate;
                break;
            }
            draw -= p;
        }
        self.state = next;
        self.steps += 1;
        let outcome = if self.steps >= self.horizon {
            StepOutcome::Truncated
        } else {
            StepOutcome::Continue
        };
        (self.encode(), S::of(reward), outcome)
    }
}

/// Episodic environment over the road network itself. An episode follows one
/// evaluation segment through the planning window: each step applies a
/// treatment (or none), pays the mileage/cost/condition reward, and samples
/// the next condition state from the learned effectiveness distribution.
#[derive(Debug)]
pub struct NetworkEnv<'a> {
    states: &'a [MdpState],
    actions: &'a [TreatmentAction],
    effectiveness: &'a EffectivenessTable,
    forecasts: &'a BTreeMap<String, Forecast>,
    encoder: &'a StateEncoder,
    network_km: f64,
    start_year: i32,
    end_year: i32,
    current: MdpState,
}

impl<'a> NetworkEnv<'a> {
    /// Checks everything stepping will rely on, so [`Environment::step`] can
    /// never fail mid-training: each start state must be encodable, fit
    /// inside the network mileage, have a forecast for its route, and every
    /// state one transition away must encode as well. One step is enough to
    /// cover the whole reachable set because the encoder is per-factor and
    /// transitions always rebase condition on the same forecast, so deeper
    /// steps only recombine factor values already seen at depth one.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        states: &'a [MdpState],
        actions: &'a [TreatmentAction],
        effectiveness: &'a EffectivenessTable,
        forecasts: &'a BTreeMap<String, Forecast>,
        encoder: &'a StateEncoder,
        network_km: f64,
        start_year: i32,
        end_year: i32,
    ) -> Result<Self, RecommendError> {
        if states.is_empty() {
            return Err(RecommendError::Empty {
                place: "plan states",
            });
        }
        if actions.is_empty() {
            return Err(RecommendError::Empty {
                place: "action set",
            });
        }
        if network_km <= 0.0 {
            return Err(RecommendError::BadNetworkMileage {
                network: network_km,
            });
        }
        if start_year > end_year {
            return Err(RecommendError::InvalidConfig {
                message: format!(
                    "planning window start {start_year} is after end {end_year}"
                ),
            });
        }
        for state in states {
            let km = state.segment.length_km();
            if km < 0.0 || km > network_km {
                return Err(RecommendError::MileageExceeded {
                    maintained: km,
                    network: network_km,
                });
            }
        }
        for state in reachable_states(states, actions, effectiveness, forecasts)? {
            encoder.encode::<f64>(&state)?;
        }
        let current = states[0].clone();
        Ok(NetworkEnv {
            states,
            actions,
            effectiveness,
            forecasts,
            encoder,
            network_km,
            start_year,
            end_year,
            current,
        })
    }
}

impl<S: Scalar> Environment<S> for NetworkEnv<'_> {
    fn state_dim(&self) -> usize {
        self.encoder.width()
    }

    fn num_actions(&self) -> usize {
        self.actions.len()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<S> {
        let mut state = self.states[rng.gen_range(0..self.states.len())].clone();
        state.year = self.start_year;
        let encoded = self.encoder.encode(&state).expect("validated in new");
        self.current = state;
        encoded
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Vec<S>, S, StepOutcome) {
        let act = &self.actions[action];
        let r = reward(
            self.current.segment.length_km(),
            self.network_km,
            act.cost_per_km,
            act.attenuation,
            self.current.predicted_next_pci,
        )
        .expect("validated in new");
        let forecast = self
            .forecasts
            .get(&self.current.segment.route_id)
            .expect("validated in new");
        let outcomes = transition(&self.current, act, self.effectiveness, forecast)
            .expect("validated in new");
        let mut draw = rng.gen::<f64>();
        let mut chosen = outcomes.len() - 1;
        for (i, (_, p)) in outcomes.iter().enumerate() {
            if draw < *p {
                chosen = i;
                break;
            }
            draw -= p;
        }
        let next = outcomes.into_iter().nth(chosen).expect("chosen in range").0;
        let outcome = if next.year > self.end_year {
            StepOutcome::Truncated
        } else {
            StepOutcome::Continue
        };
        let encoded = self.encoder.encode(&next).expect("validated in new");
        self.current = next;
        (encoded, S::of(r), outcome)
    }
}

/// Training settings. The defaults follow the usual deep Q-learning setup
/// for this problem: discount 0.9, learning rate 0.001, 5000 epochs, with
/// replay and exploration machinery sized conservatively.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// One environment step and one gradient update per epoch.
    pub epochs: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of epochs over which epsilon anneals linearly.
    pub anneal_fraction: f64,
    /// Updates between target-network syncs.
    pub target_sync: usize,
    /// Hidden widths; `None` sizes them to the conventional parameter budget.
    pub hidden: Option<[usize; 3]>,
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.9,
            learning_rate: 0.001,
            epochs: 5000,
            replay_capacity: 10_000,
            batch_size: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            anneal_fraction: 0.5,
            target_sync: 100,
            hidden: None,
            seed: 0,
        }
    }
}

/// Trained network plus the per-epoch batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DqnResult<S> {
    pub network: QNetwork<S>,
    pub loss_trace: Vec<f64>,
}

struct Transition<S> {
    state: Vec<S>,
    action: usize,
    reward: S,
    next_state: Vec<S>,
    terminal: bool,
}

/// Fixed-capacity ring buffer of transitions.
struct Replay<S> {
    capacity: usize,
    items: Vec<Transition<S>>,
    write: usize,
}

impl<S> Replay<S> {
    fn new(capacity: usize) -> Self {
        Replay {
            capacity,
            items: Vec::with_capacity(capacity),
            write: 0,
        }
    }

    fn push(&mut self, t: Transition<S>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }
}

fn validate_config(cfg: &DqnConfig) -> Result<(), RecommendError> {
    let bad = |message: String| Err(RecommendError::InvalidConfig { message });
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(RecommendError::BadDiscount { gamma: cfg.gamma });
    }
    if !(cfg.learning_rate > 0.0) {
        return bad(format!("learning rate must be positive, got {}", cfg.learning_rate));
    }
    if cfg.epochs == 0 {
        return bad("epochs must be at least 1".to_string());
    }
    if cfg.batch_size == 0 {
        return bad("batch size must be at least 1".to_string());
    }
    if cfg.replay_capacity < cfg.batch_size {
        return bad(format!(
            "replay capacity {} cannot hold a batch of {}",
            cfg.replay_capacity, cfg.batch_size
        ));
    }
    if !(0.0..=1.0).contains(&cfg.anneal_fraction) {
        return bad(format!("anneal fraction must lie in [0, 1], got {}", cfg.anneal_fraction));
    }
    for (name, e) in [("epsilon_start", cfg.epsilon_start), ("epsilon_end", cfg.epsilon_end)] {
        if !(0.0..=1.0).contains(&e) {
            return bad(format!("{name} must lie in [0, 1], got {e}"));
        }
    }
    if cfg.target_sync == 0 {
        return bad("target sync interval must be at least 1".to_string());
    }
    Ok(())
}

fn epsilon_at(cfg: &DqnConfig, epoch: usize) -> f64 {
    let span = (cfg.epochs as f64 * cfg.anneal_fraction).max(1.0);
    let t = (epoch as f64 / span).min(1.0);
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * t
}

fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Adam optimizer over a flat parameter vector.
struct Adam<S> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    t: i32,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr: S::of(lr),
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            t: 0,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
        }
    }

    fn step(&mut self, params: &mut [S], grads: &[S]) {
        self.t += 1;
        let c1 = S::one() - self.beta1.powi(self.t);
        let c2 = S::one() - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            *m = self.beta1 * *m + (S::one() - self.beta1) * *g;
            *v = self.beta2 * *v + (S::one() - self.beta2) * *g * *g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Epsilon-greedy deep Q-learning with experience replay and a target copy.
///
/// Each epoch takes one environment step and one gradient update on a batch
/// sampled from replay (prefilled with random-policy steps so the first
/// epoch already has a full batch). The loss trace has exactly one mean
/// squared temporal-difference entry per epoch.
pub fn dqn_train<S: Scalar, E: Environment<S>>(
    env: &mut E,
    cfg: &DqnConfig,
) -> Result<DqnResult<S>, RecommendError> {
    validate_config(cfg)?;
    let dim = env.state_dim();
    let actions = env.num_actions();
    if dim == 0 {
        return Err(RecommendError::Empty { place: "state encoding" });
    }
    if actions == 0 {
        return Err(RecommendError::Empty { place: "action set" });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = cfg
        .hidden
        .unwrap_or_else(|| QNetwork::<S>::default_hidden_sizes(dim, actions));
    let mut q = QNetwork::<S>::new(dim, hidden, actions, rng.gen())?;
    let mut target = q.clone();

    let mut replay = Replay::new(cfg.replay_capacity);
    let mut state = env.reset(&mut rng);
    for _ in 0..cfg.batch_size {
        let action = rng.gen_range(0..actions);
        let (next, reward, outcome) = env.step(action, &mut rng);
        replay.push(Transition {
            state: std::mem::replace(&mut state, next.clone()),
            action,
            reward,
            next_state: next,
            terminal: outcome == StepOutcome::Terminal,
        });
        if outcome != StepOutcome::Continue {
            state = env.reset(&mut rng);
        }
    }

    let mut params = q.params();
    let mut adam = Adam::new(cfg.learning_rate, params.len());
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let epsilon = epsilon_at(cfg, epoch);
        let action = if rng.gen::<f64>() < epsilon {
            rng.gen_range(0..actions)
        } else {
            argmax(&q.forward(&state)?)
        };
        let (next, reward, outcome) = env.step(action, &mut rng);
        replay.push(Transition {
            state: std::mem::replace(&mut state, next.clone()),
            action,
            reward,
            next_state: next,
            terminal: outcome == StepOutcome::Terminal,
        });
        if outcome != StepOutcome::Continue {
            state = env.reset(&mut rng);
        }

        let mut grads = q.zeros_like();
        let gamma = S::of(cfg.gamma);
        let scale = S::of(2.0 / cfg.batch_size as f64);
        let mut loss = S::zero();
        for _ in 0..cfg.batch_size {
            let t = &replay.items[rng.gen_range(0..replay.items.len())];
            let acts = q.activations(&t.state);
            let predicted = acts.last().expect("output layer")[t.action];
            let mut y = t.reward;
            if !t.terminal {
                let future = target.forward(&t.next_state)?;
                y = y + gamma * future[argmax(&future)];
            }
            let diff = predicted - y;
            loss += diff * diff;
            let mut output_grad = vec![S::zero(); actions];
            output_grad[t.action] = scale * diff;
            q.accumulate_grads(&acts, &output_grad, &mut grads);
        }
        let loss = (loss / S::of(cfg.batch_size as f64)).as_f64();
        if !loss.is_finite() {
            return Err(RecommendError::Diverged { epoch });
        }
        loss_trace.push(loss);

        adam.step(&mut params, &grads.params());
        q.set_params(&params);
        if (epoch + 1) % cfg.target_sync == 0 {
            target = q.clone();
        }
    }

    Ok(DqnResult {
        network: q,
        loss_trace,
    })
}

/// One line of the final maintenance plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEntry {
    pub segment: crate::domain::SegmentId,
    pub action: TreatmentAction,
    /// Expected condition gain over the do-nothing forecast; 0 for no action.
    pub expected_effectiveness: f64,
    pub q_value: f64,
}

/// Greedy plan: for every state, the argmax-Q action (ties to the lowest
/// action index) with its expected condition gain under [`transition`].
pub fn greedy_plan<S: Scalar>(
    q: &QNetwork<S>,
    states: &[MdpState],
    encoder: &StateEncoder,
    actions: &[TreatmentAction],
    effectiveness: &EffectivenessTable,
    forecasts: &BTreeMap<String, Forecast>,
) -> Result<Vec<PlanEntry>, RecommendError> {
    if actions.is_empty() {
        return Err(RecommendError::Empty { place: "action set" });
    }
    if q.num_actions() != actions.len() {
        return Err(RecommendError::DimensionMismatch {
            expected: actions.len(),
            got: q.num_actions(),
        });
    }
    let mut plan = Vec::with_capacity(states.len());
    for state in states {
        let encoded: Vec<S> = encoder.encode(state)?;
        let values = q.forward(&encoded)?;
        let choice = argmax(&values);
        let action = actions[choice].clone();
        let expected_effectiveness = if action.is_no_action() {
            0.0
        } else {
            let forecast = forecasts.get(&state.segment.route_id).ok_or_else(|| {
                RecommendError::MissingForecast {
                    route_id: state.segment.route_id.clone(),
                }
            })?;
            let base = forecast.next_year_pci();
            transition(state, &action, effectiveness, forecast)?
                .iter()
                .map(|(next, p)| p * (next.pci - base))
                .sum()
        };
        plan.push(PlanEntry {
            segment: state.segment.clone(),
            action,
            expected_effectiveness,
            q_value: values[choice].as_f64(),
        });
    }
    Ok(plan)
}

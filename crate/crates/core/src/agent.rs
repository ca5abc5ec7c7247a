//! Dual-network online learner.
//!
//! `theta` is trained continuously from an ε-greedy stream of its own
//! experience; `phi` trades greedily and is refreshed from `theta` only at
//! steps where it chose to be flat. Q values are hold values: the TD target
//! bootstraps on the same action that was taken, never on a max.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::market::{diff_series, zscore_causal, Action, MarketState, PriceSeries};
use crate::netcore::{
    accumulate_q_loss, apply_gradients_in_place, copy_params, forward, init_params, GradientSet, NetDims,
    NetworkParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon: f64,
    /// Replay capacity `L`.
    pub buffer_capacity: usize,
    /// Minibatch size `N`.
    pub batch_size: usize,
    pub lr: f64,
    pub horizon: usize,
    pub lstm_hidden: usize,
    pub fc_hidden: usize,
    pub seed: u64,
    pub copy_check_every: usize,
    /// Feed causally z-scored diffs to the networks (rewards stay raw).
    pub zscore: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            epsilon: 0.1,
            buffer_capacity: 10_000,
            batch_size: 32,
            lr: 1e-3,
            horizon: 32,
            lstm_hidden: 32,
            fc_hidden: 16,
            seed: 0,
            copy_check_every: 1,
            zscore: false,
        }
    }
}

impl AgentConfig {
    pub fn dims(&self) -> NetDims {
        NetDims::new(self.horizon, self.lstm_hidden, self.fc_hidden)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon must be in [0, 1], got {}", self.epsilon));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad(format!(
                "need 1 <= batch ({}) <= buffer capacity ({})",
                self.batch_size, self.buffer_capacity
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.copy_check_every == 0 {
            return bad("copy_check_every must be at least 1".into());
        }
        self.dims().validate_q()
    }
}

/// `(s, a, r, s')`, with `s'.prev_action == a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: MarketState,
    pub a: Action,
    pub r: f64,
    pub s_next: MarketState,
}

impl Transition {
    pub fn new(s: MarketState, a: Action, r: f64, s_next: MarketState) -> Result<Self> {
        if s_next.prev_action != a {
            return Err(Error::Config(format!(
                "next state carries action {} but the transition took {a}",
                s_next.prev_action
            )));
        }
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("reward {r}")));
        }
        Ok(Self { s, a, r, s_next })
    }
}

/// Bounded FIFO of transitions; pushing into a full buffer drops the oldest.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    slots: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be at least 1".into()));
        }
        Ok(Self {
            slots: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
        })
    }

    /// Returns the evicted transition, if any.
    pub fn push(&mut self, tr: Transition) -> Option<Transition> {
        let evicted = if self.slots.len() == self.capacity {
            self.slots.pop_front()
        } else {
            None
        };
        self.slots.push_back(tr);
        evicted
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.slots.get(i)
    }
}

/// Argmax over Q values; ties prefer flat, then long, then short.
pub fn select_greedy(params: &NetworkParams, s: &MarketState) -> Result<Action> {
    let q = forward(params, s)?;
    if !q.is_finite() {
        return Err(Error::NonFinite(format!("Q values {q:?}")));
    }
    let mut best = Action::Flat;
    for a in [Action::Long, Action::Short] {
        if q[a] > q[best] {
            best = a;
        }
    }
    Ok(best)
}

pub fn select_epsilon_greedy<R: Rng + ?Sized>(
    params: &NetworkParams,
    s: &MarketState,
    epsilon: f64,
    rng: &mut R,
) -> Result<Action> {
    if rng.gen::<f64>() < epsilon {
        Ok(Action::ALL[rng.gen_range(0..Action::ALL.len())])
    } else {
        select_greedy(params, s)
    }
}

/// `r + gamma * Q(s', a)` where `Q(s', a)` is evaluated at the action taken.
pub fn td_target(r: f64, gamma: f64, q_next_same_action: f64) -> f64 {
    r + gamma * q_next_same_action
}

#[derive(Debug, Clone)]
pub struct DualAgent {
    theta: NetworkParams,
    phi: NetworkParams,
    cfg: AgentConfig,
    rng: ChaCha8Rng,
    grads: GradientSet,
}

impl DualAgent {
    /// Learner initialised from `cfg.seed`; the trader starts as a copy of it.
    pub fn new(cfg: AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let theta = init_params(cfg.dims(), cfg.seed)?;
        let phi = copy_params(&theta);
        Self::from_params(cfg, theta, phi)
    }

    pub fn from_params(cfg: AgentConfig, theta: NetworkParams, phi: NetworkParams) -> Result<Self> {
        cfg.validate()?;
        if *theta.dims() != cfg.dims() || *phi.dims() != cfg.dims() {
            return Err(Error::Config(format!(
                "network dims must match the config ({:?})",
                cfg.dims()
            )));
        }
        // Exploration and minibatch draws use a stream separate from weight init.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            grads: GradientSet::zeros(cfg.dims()),
            theta,
            phi,
            cfg,
            rng,
        })
    }

    pub fn theta(&self) -> &NetworkParams {
        &self.theta
    }

    pub fn phi(&self) -> &NetworkParams {
        &self.phi
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn trade_action(&self, s: &MarketState) -> Result<Action> {
        select_greedy(&self.phi, s)
    }

    pub fn learner_action(&mut self, s: &MarketState) -> Result<Action> {
        select_epsilon_greedy(&self.theta, s, self.cfg.epsilon, &mut self.rng)
    }

    /// One SGD step on a minibatch drawn without replacement.
    /// Returns `Ok(None)` without touching anything when the buffer holds
    /// fewer than `batch_size` transitions.
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<Option<f64>> {
        let n = self.cfg.batch_size;
        if buffer.len() < n {
            return Ok(None);
        }
        self.grads.clear();
        let mut total = 0.0;
        for i in index::sample(&mut self.rng, buffer.len(), n) {
            let tr = &buffer.slots[i];
            let q_next = forward(&self.theta, &tr.s_next)?;
            let y = td_target(tr.r, self.cfg.gamma, q_next[tr.a]);
            total += accumulate_q_loss(&self.theta, &tr.s, tr.a, y, &mut self.grads)?;
        }
        apply_gradients_in_place(&mut self.theta, &self.grads, n, self.cfg.lr)?;
        Ok(Some(total / n as f64))
    }

    /// Copies the learner into the trader iff the trader's last action was flat.
    pub fn maybe_copy(&mut self, last_trade_action: Action) -> bool {
        if last_trade_action == Action::Flat {
            self.phi = copy_params(&self.theta);
            true
        } else {
            false
        }
    }
}

/// What happened at one step of [`run_online_with`].
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub step: usize,
    /// Index of the newest diff visible at this step.
    pub t: usize,
    pub trade_action: Action,
    pub learner_action: Action,
    pub trade_reward: f64,
    pub transition: &'a Transition,
    pub loss: Option<f64>,
    pub copied: bool,
}

/// Per-step record of an online run. All columns have one entry per step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    /// Diff index of the first step (`H - 1`).
    pub first_t: usize,
    pub trade_actions: Vec<Action>,
    pub learner_actions: Vec<Action>,
    pub learner_rewards: Vec<f64>,
    /// Rewards of the executed (trader) ledger.
    pub trade_rewards: Vec<f64>,
    pub losses: Vec<Option<f64>>,
    pub copied: Vec<bool>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.trade_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trade_actions.is_empty()
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        (0..self.len())
            .map(|i| TraceRow {
                step: i,
                trade_action: self.trade_actions[i],
                learner_action: self.learner_actions[i],
                learner_reward: self.learner_rewards[i],
                loss: self.losses[i],
                copied: self.copied[i],
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        trace_to_csv(&self.rows())
    }
}

pub const TRACE_HEADER: &str = "step,trade_action,learner_action,learner_reward,loss,copied";

/// One line of the trace CSV. `loss` is empty on steps that did not train.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub trade_action: Action,
    pub learner_action: Action,
    pub learner_reward: f64,
    pub loss: Option<f64>,
    pub copied: bool,
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 40);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let loss = r.loss.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step,
            r.trade_action,
            r.learner_action,
            r.learner_reward,
            loss,
            u8::from(r.copied)
        );
    }
    out
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRACE_HEADER => {}
        _ => return Err(Error::Config(format!("trace must start with `{TRACE_HEADER}`"))),
    }
    let bad = |line: usize, what: &str| Error::Config(format!("trace line {}: bad {what}", line + 1));
    let action = |line: usize, raw: &str| -> Result<Action> {
        raw.parse::<i8>()
            .ok()
            .and_then(Action::from_value)
            .ok_or_else(|| bad(line, "action"))
    };
    let mut rows = Vec::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 6 {
            return Err(bad(line, "field count"));
        }
        rows.push(TraceRow {
            step: f[0].parse().map_err(|_| bad(line, "step"))?,
            trade_action: action(line, f[1])?,
            learner_action: action(line, f[2])?,
            learner_reward: f[3].parse().map_err(|_| bad(line, "reward"))?,
            loss: if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().map_err(|_| bad(line, "loss"))?)
            },
            copied: match f[5] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(line, "copied flag")),
            },
        });
    }
    Ok(rows)
}

pub fn run_online(agent: &mut DualAgent, series: &PriceSeries, cfg: &EnvConfig) -> Result<RunTrace> {
    run_online_with(agent, series, cfg, |_, _| {})
}

/// Runs the online loop over `series`, calling `observe` after every step.
///
/// Per step: the trader picks greedily from its own ledger's state, the
/// learner picks ε-greedily from its own ledger's state, the learner's
/// transition is stored, `theta` takes one training step once the buffer
/// holds a batch, and the copy gate is checked against the trade action.
pub fn run_online_with<F>(
    agent: &mut DualAgent,
    series: &PriceSeries,
    cfg: &EnvConfig,
    mut observe: F,
) -> Result<RunTrace>
where
    F: FnMut(&StepEvent<'_>, &DualAgent),
{
    if cfg.horizon != agent.cfg.horizon {
        return Err(Error::Config(format!(
            "environment horizon {} differs from agent horizon {}",
            cfg.horizon, agent.cfg.horizon
        )));
    }
    if series.len() < cfg.horizon + 2 {
        return Err(Error::InsufficientHistory(format!(
            "need at least H + 2 = {} prices, got {}",
            cfg.horizon + 2,
            series.len()
        )));
    }
    let diffs = diff_series(series)?;
    let features = if agent.cfg.zscore {
        zscore_causal(&diffs)
    } else {
        diffs.clone()
    };
    let mut trade_env = Env::with_features(*cfg, &diffs, &features)?;
    let mut learn_env = Env::with_features(*cfg, &diffs, &features)?;
    let mut buffer = ReplayBuffer::new(agent.cfg.buffer_capacity)?;

    let steps = trade_env.num_steps();
    let mut trace = RunTrace {
        first_t: trade_env.env_state().t,
        trade_actions: Vec::with_capacity(steps),
        learner_actions: Vec::with_capacity(steps),
        learner_rewards: Vec::with_capacity(steps),
        trade_rewards: Vec::with_capacity(steps),
        losses: Vec::with_capacity(steps),
        copied: Vec::with_capacity(steps),
    };

    let mut step = 0;
    while !trade_env.is_done() {
        let t = trade_env.env_state().t;
        let trade_state = trade_env.observe()?;
        let trade_action = agent.trade_action(&trade_state)?;
        let trade_reward = trade_env.step(trade_action)?.reward;

        let learn_state = learn_env.observe()?;
        let learner_action = agent.learner_action(&learn_state)?;
        let outcome = learn_env.step(learner_action)?;
        let transition = Transition::new(learn_state, learner_action, outcome.reward, outcome.next_state)?;
        buffer.push(transition);

        let loss = agent.train_step(&buffer)?;
        let copied = step % agent.cfg.copy_check_every == 0 && agent.maybe_copy(trade_action);

        trace.trade_actions.push(trade_action);
        trace.learner_actions.push(learner_action);
        trace.learner_rewards.push(outcome.reward);
        trace.trade_rewards.push(trade_reward);
        trace.losses.push(loss);
        trace.copied.push(copied);

        let event = StepEvent {
            step,
            t,
            trade_action,
            learner_action,
            trade_reward,
            transition: buffer.slots.back().expect("just pushed"),
            loss,
            copied,
        };
        observe(&event, agent);
        step += 1;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{gen_synthetic, SyntheticKind};
    use crate::netcore::QValues;

    fn tiny_cfg() -> AgentConfig {
        AgentConfig {
            horizon: 3,
            lstm_hidden: 3,
            fc_hidden: 3,
            buffer_capacity: 8,
            batch_size: 4,
            lr: 0.05,
            ..AgentConfig::default()
        }
    }

    fn st(diffs: &[f64], prev: Action) -> MarketState {
        MarketState {
            diffs: diffs.to_vec(),
            prev_action: prev,
        }
    }

    /// Network whose outputs are exactly the output biases.
    fn constant_net(dims: NetDims, q: QValues) -> NetworkParams {
        let mut flat = vec![0.0; dims.num_params()];
        let n = flat.len();
        flat[n - 3..].copy_from_slice(&q.to_array());
        NetworkParams::from_flat(dims, &flat).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        for bad in [
            AgentConfig { gamma: 1.0, ..tiny_cfg() },
            AgentConfig { epsilon: 1.5, ..tiny_cfg() },
            AgentConfig { batch_size: 9, ..tiny_cfg() },
            AgentConfig { lr: 0.0, ..tiny_cfg() },
            AgentConfig { copy_check_every: 0, ..tiny_cfg() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn greedy_selection_and_ties() {
        let dims = tiny_cfg().dims();
        let s = st(&[0.0; 3], Action::Flat);
        let pick = |q| select_greedy(&constant_net(dims, q), &s).unwrap();
        assert_eq!(pick(QValues::new(-1.0, 0.0, 2.0)), Action::Long);
        assert_eq!(pick(QValues::new(0.0, 0.0, 0.0)), Action::Flat);
        assert_eq!(pick(QValues::new(5.0, 0.0, 5.0)), Action::Long);
        assert_eq!(pick(QValues::new(3.0, 3.0, 1.0)), Action::Flat);
        assert_eq!(pick(QValues::new(3.0, 1.0, 1.0)), Action::Short);
    }

    #[test]
    fn epsilon_zero_is_greedy() {
        let p = init_params(tiny_cfg().dims(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut srng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s = st(&[srng.gen_range(-1.0..1.0), srng.gen_range(-1.0..1.0), 0.3], Action::Short);
            assert_eq!(
                select_epsilon_greedy(&p, &s, 0.0, &mut rng).unwrap(),
                select_greedy(&p, &s).unwrap()
            );
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let p = init_params(tiny_cfg().dims(), 3).unwrap();
        let s = st(&[0.1, 0.2, 0.3], Action::Flat);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            counts[select_epsilon_greedy(&p, &s, 1.0, &mut rng).unwrap().index()] += 1;
        }
        for c in counts {
            let f = c as f64 / 3000.0;
            assert!((f - 1.0 / 3.0).abs() <= 0.03, "{counts:?}");
        }
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| select_epsilon_greedy(&p, &s, 0.5, &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn non_finite_q_faults() {
        let dims = tiny_cfg().dims();
        let mut flat = vec![0.0; dims.num_params()];
        let n = flat.len();
        let f = dims.fc_hidden;
        // fc1 bias of 1 keeps tanh activations positive; huge output weights
        // and bias then overflow Q(long) to +inf.
        flat[n - 3 - 3 * f - f..n - 3 - 3 * f].fill(1.0);
        flat[n - 3 - f..n - 3].fill(f64::MAX);
        flat[n - 1] = f64::MAX;
        let p = NetworkParams::from_flat(dims, &flat).unwrap();
        let s = st(&[0.0; 3], Action::Flat);
        assert!(matches!(select_greedy(&p, &s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn td_target_examples() {
        assert!((td_target(1.0, 0.9, 2.0) - 2.8).abs() < 1e-15);
        assert_eq!(td_target(0.0, 0.0, 1e9), 0.0);
        // Perpetual hold with r = 1 and gamma = 0.8: iterate to the fixed point.
        let mut q = 0.0;
        for _ in 0..200 {
            q = td_target(1.0, 0.8, q);
        }
        assert!((q - 5.0).abs() < 1e-12);
    }

    #[test]
    fn transition_requires_consistent_next_state() {
        let s = st(&[0.0; 3], Action::Flat);
        assert!(Transition::new(s.clone(), Action::Long, 0.1, st(&[0.0; 3], Action::Short)).is_err());
        assert!(Transition::new(s.clone(), Action::Long, f64::NAN, st(&[0.0; 3], Action::Long)).is_err());
        assert!(Transition::new(s, Action::Long, 0.1, st(&[0.0; 3], Action::Long)).is_ok());
    }

    fn numbered(i: usize) -> Transition {
        let s = st(&[i as f64, 0.0, 0.0], Action::Flat);
        Transition::new(s.clone(), Action::Flat, i as f64, s).unwrap()
    }

    #[test]
    fn buffer_is_fifo() {
        for l in 1..=8 {
            for total in 0..=3 * l {
                let mut b = ReplayBuffer::new(l).unwrap();
                for i in 0..total {
                    let ev = b.push(numbered(i));
                    assert_eq!(ev.map(|t| t.r as usize), (i >= l).then(|| i - l));
                }
                let held: Vec<usize> = b.iter().map(|t| t.r as usize).collect();
                let expect: Vec<usize> = (total.saturating_sub(l)..total).collect();
                assert_eq!(held, expect);
            }
        }
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn underfull_buffer_is_a_no_op() {
        let mut agent = DualAgent::new(tiny_cfg()).unwrap();
        let before = agent.theta().clone();
        let mut b = ReplayBuffer::new(8).unwrap();
        b.push(numbered(1));
        assert_eq!(agent.train_step(&b).unwrap(), None);
        assert_eq!(agent.theta(), &before);
    }

    #[test]
    fn self_consistent_batch_is_a_fixed_point() {
        let cfg = tiny_cfg();
        let zero = NetworkParams::zeros(cfg.dims()).unwrap();
        let mut agent = DualAgent::from_params(cfg, zero.clone(), zero.clone()).unwrap();
        let s = st(&[0.1, -0.2, 0.3], Action::Flat);
        let s2 = st(&[-0.2, 0.3, 0.4], Action::Long);
        let mut b = ReplayBuffer::new(8).unwrap();
        for _ in 0..cfg.batch_size {
            b.push(Transition::new(s.clone(), Action::Long, 0.0, s2.clone()).unwrap());
        }
        assert_eq!(agent.train_step(&b).unwrap(), Some(0.0));
        assert_eq!(agent.theta(), &zero);
    }

    #[test]
    fn myopic_learning_regresses_to_reward() {
        let cfg = AgentConfig {
            gamma: 0.0,
            lr: 0.1,
            ..tiny_cfg()
        };
        let mut agent = DualAgent::new(cfg).unwrap();
        let s = st(&[0.5, -0.25, 0.75], Action::Short);
        let s2 = st(&[-0.25, 0.75, 0.1], Action::Long);
        let mut b = ReplayBuffer::new(8).unwrap();
        for _ in 0..8 {
            b.push(Transition::new(s.clone(), Action::Long, 0.37, s2.clone()).unwrap());
        }
        for _ in 0..2000 {
            agent.train_step(&b).unwrap();
        }
        let q = forward(agent.theta(), &s).unwrap();
        assert!((q.q_long - 0.37).abs() < 1e-3, "{q:?}");
        assert_eq!(agent.phi(), &init_params(cfg.dims(), cfg.seed).unwrap());
    }

    #[test]
    fn bootstrap_uses_the_taken_action() {
        // Q(s') = (10, 0, -10); the transition takes Long, so the target is
        // r + gamma * (-10), not r + gamma * 10.
        let cfg = AgentConfig {
            gamma: 0.5,
            batch_size: 1,
            ..tiny_cfg()
        };
        let net = constant_net(cfg.dims(), QValues::new(10.0, 0.0, -10.0));
        let mut agent = DualAgent::from_params(cfg, net.clone(), net).unwrap();
        let s = st(&[0.0; 3], Action::Flat);
        let mut b = ReplayBuffer::new(8).unwrap();
        b.push(Transition::new(s.clone(), Action::Long, 1.0, st(&[0.0; 3], Action::Long)).unwrap());
        let loss = agent.train_step(&b).unwrap().unwrap();
        // Q(s, Long) = -10, y = 1 - 5 = -4
        assert!((loss - 36.0).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn copy_gate() {
        let mut agent = DualAgent::new(tiny_cfg()).unwrap();
        let mut b = ReplayBuffer::new(8).unwrap();
        for i in 0..8 {
            let s = st(&[i as f64 * 0.1, 0.2, -0.1], Action::Flat);
            b.push(Transition::new(s.clone(), Action::Long, 0.3, st(&[0.2, -0.1, 0.0], Action::Long)).unwrap());
        }
        agent.train_step(&b).unwrap();
        let phi_before = agent.phi().clone();
        assert!(!agent.maybe_copy(Action::Long));
        assert!(!agent.maybe_copy(Action::Short));
        assert_eq!(agent.phi(), &phi_before);
        assert_ne!(agent.phi(), agent.theta());

        assert!(agent.maybe_copy(Action::Flat));
        let s = st(&[0.3, -0.2, 0.1], Action::Short);
        assert_eq!(forward(agent.phi(), &s).unwrap(), forward(agent.theta(), &s).unwrap());

        let frozen = agent.phi().clone();
        for _ in 0..5 {
            agent.train_step(&b).unwrap();
        }
        assert_eq!(agent.phi(), &frozen);
        assert_ne!(agent.theta(), &frozen);
    }

    #[test]
    fn greedy_twins_trade_identically() {
        // No exploration and no training (the batch never fills): both
        // ledgers see the same states and pick the same actions.
        let cfg = AgentConfig {
            epsilon: 0.0,
            buffer_capacity: 1000,
            batch_size: 1000,
            ..tiny_cfg()
        };
        let series = gen_synthetic(&SyntheticKind::sine(1.0, 10.0), 200, 0).unwrap();
        let mut agent = DualAgent::new(cfg).unwrap();
        let trace = run_online(&mut agent, &series, &EnvConfig::new(0.0, 3).unwrap()).unwrap();
        assert_eq!(trace.trade_actions, trace.learner_actions);
        assert_eq!(trace.trade_rewards, trace.learner_rewards);
    }

    #[test]
    fn run_shapes_and_trace_round_trip() {
        let cfg = tiny_cfg();
        let series = gen_synthetic(&SyntheticKind::random_walk(0.1), 60, 4).unwrap();
        let mut agent = DualAgent::new(cfg).unwrap();
        let trace = run_online(&mut agent, &series, &EnvConfig::new(0.05, 3).unwrap()).unwrap();
        let steps = 60 - 1 - 3;
        assert_eq!(trace.first_t, 2);
        for len in [
            trace.trade_actions.len(),
            trace.learner_actions.len(),
            trace.learner_rewards.len(),
            trace.trade_rewards.len(),
            trace.losses.len(),
            trace.copied.len(),
        ] {
            assert_eq!(len, steps);
        }
        assert!(trace.losses[..cfg.batch_size - 1].iter().all(Option::is_none));
        assert!(trace.losses[cfg.batch_size - 1..].iter().all(Option::is_some));
        let parsed = parse_trace_csv(&trace.to_csv()).unwrap();
        assert_eq!(parsed, trace.rows());
    }

    #[test]
    fn run_rejects_short_series_and_mismatched_horizon() {
        let mut agent = DualAgent::new(tiny_cfg()).unwrap();
        let short = gen_synthetic(&SyntheticKind::sine(1.0, 10.0), 4, 0).unwrap();
        assert!(run_online(&mut agent, &short, &EnvConfig::new(0.0, 3).unwrap()).is_err());
        let ok = gen_synthetic(&SyntheticKind::sine(1.0, 10.0), 5, 0).unwrap();
        assert_eq!(run_online(&mut agent, &ok, &EnvConfig::new(0.0, 3).unwrap()).unwrap().len(), 1);
        assert!(run_online(&mut agent, &ok, &EnvConfig::new(0.0, 2).unwrap()).is_err());
    }

    #[test]
    fn trace_parser_rejects_garbage() {
        assert!(parse_trace_csv("a,b\n").is_err());
        assert!(parse_trace_csv(&format!("{TRACE_HEADER}\n0,2,0,0.1,,0\n")).is_err());
        assert!(parse_trace_csv(&format!("{TRACE_HEADER}\n0,1,0,0.1,,yes\n")).is_err());
        assert_eq!(parse_trace_csv(&format!("{TRACE_HEADER}\n")).unwrap(), vec![]);
    }
}

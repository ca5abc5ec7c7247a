//! The trading MDP: one unit of position, reward per step net of cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{make_state, Action, MarketState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Price units charged per unit of position change.
    pub cost: f64,
    pub horizon: usize,
}

impl EnvConfig {
    pub fn new(cost: f64, horizon: usize) -> Result<Self> {
        let cfg = Self { cost, horizon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cost >= 0.0 && self.cost.is_finite()) {
            return Err(Error::Config(format!("cost must be finite and >= 0, got {}", self.cost)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// One-step reward: `action * d_next - cost * |action - prev_action|`.
pub fn reward(action: Action, prev_action: Action, d_next: f64, cost: f64) -> f64 {
    action.as_f64() * d_next - cost * f64::from(action.change(prev_action))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvState {
    /// Index of the newest diff visible to the agent.
    pub t: usize,
    /// Position held going into step `t`, i.e. the last executed action.
    pub position: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub next_state: MarketState,
    pub done: bool,
}

/// A position ledger walking a diff sequence.
///
/// `rewards_from` supplies the price changes that are paid out; `features`
/// supplies what the network sees (identical unless inputs are normalised).
#[derive(Debug, Clone)]
pub struct Env<'a> {
    cfg: EnvConfig,
    rewards_from: &'a [f64],
    features: &'a [f64],
    state: EnvState,
}

impl<'a> Env<'a> {
    pub fn new(cfg: EnvConfig, diffs: &'a [f64]) -> Result<Self> {
        Self::with_features(cfg, diffs, diffs)
    }

    pub fn with_features(cfg: EnvConfig, diffs: &'a [f64], features: &'a [f64]) -> Result<Self> {
        cfg.validate()?;
        if features.len() != diffs.len() {
            return Err(Error::Config("feature and diff sequences differ in length".into()));
        }
        if diffs.len() < cfg.horizon + 1 {
            return Err(Error::InsufficientHistory(format!(
                "{} diffs cannot fill a window of {} and pay one step",
                diffs.len(),
                cfg.horizon
            )));
        }
        Ok(Self {
            cfg,
            rewards_from: diffs,
            features,
            state: EnvState {
                t: cfg.horizon - 1,
                position: Action::Flat,
            },
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn env_state(&self) -> EnvState {
        self.state
    }

    pub fn position(&self) -> Action {
        self.state.position
    }

    /// True once no diff remains to pay a further step.
    pub fn is_done(&self) -> bool {
        self.state.t + 1 >= self.rewards_from.len()
    }

    /// Number of steps an episode over these diffs executes.
    pub fn num_steps(&self) -> usize {
        self.rewards_from.len() - self.cfg.horizon
    }

    /// Current observation with the held position as `prev_action`.
    pub fn observe(&self) -> Result<MarketState> {
        make_state(self.features, self.state.t, self.cfg.horizon, self.state.position)
    }

    /// Executes `action`, paid with `d_{t+1}`.
    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::EpisodeDone(self.state.t));
        }
        let t = self.state.t;
        let r = reward(action, self.state.position, self.rewards_from[t + 1], self.cfg.cost);
        self.state = EnvState {
            t: t + 1,
            position: action,
        };
        Ok(StepResult {
            reward: r,
            next_state: self.observe()?,
            done: self.is_done(),
        })
    }
}

/// Closed form of the summed rewards of an action sequence started flat at
/// `t0`: `sum a_k d_{t0+k+1} - c sum |a_k - a_{k-1}|`.
pub fn ledger_total(actions: &[Action], diffs: &[f64], t0: usize, cost: f64) -> f64 {
    let mut prev = Action::Flat;
    let mut pnl = 0.0;
    let mut changes = 0u64;
    for (k, &a) in actions.iter().enumerate() {
        pnl += a.as_f64() * diffs[t0 + k + 1];
        changes += u64::from(a.change(prev));
        prev = a;
    }
    pnl - cost * changes as f64
}

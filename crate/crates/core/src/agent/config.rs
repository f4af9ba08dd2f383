use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

/// Network used to pick the bootstrap action (interaction level) or the
/// bootstrap goal (session level) in the TD target. Evaluation of the picked
/// action always uses the target network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelection {
    Target,
    Online,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorUpdate {
    /// The session TD loss is back-propagated through `g = μ(s)`.
    TdBackprop,
    /// Deterministic policy gradient: the actor ascends `Q(s, μ(s))`.
    PolicyGradient,
}

/// Linear ε schedule over training updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Exploration {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for Exploration {
    fn default() -> Self {
        Exploration {
            start: 0.0,
            end: 0.0,
            decay_steps: 0,
        }
    }
}

impl Exploration {
    pub fn epsilon(&self, step: u64) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub tau: f64,
    pub state_dim: usize,
    pub goal_dim: usize,
    /// Hidden widths shared by the actor and every Q head.
    pub hidden: Vec<usize>,
    pub dueling: bool,
    pub selection: TargetSelection,
    pub actor_update: ActorUpdate,
    pub exploration: Exploration,
    /// Feed the observed reward to the state encoder next to the item.
    pub reward_input: bool,
    /// Truncated back-propagation horizon; the session length when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bptt_horizon: Option<usize>,
    /// Bounded FIFO replay; fully online when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplayConfig>,
    pub adam: AdamConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.5,
            learning_rate: 1e-3,
            tau: 0.01,
            state_dim: 32,
            goal_dim: 8,
            hidden: vec![64],
            dueling: true,
            selection: TargetSelection::Target,
            actor_update: ActorUpdate::TdBackprop,
            exploration: Exploration::default(),
            reward_input: true,
            bptt_horizon: None,
            replay: None,
            adam: AdamConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::config(format!("agent.{key}"), msg));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", format!("must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", format!("must lie in (0, 1], got {}", self.tau));
        }
        if self.state_dim == 0 {
            return bad("state_dim", "must be at least 1".into());
        }
        if self.goal_dim == 0 {
            return bad("goal_dim", "must be at least 1".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden", "layer widths must be at least 1".into());
        }
        let e = &self.exploration;
        for (key, v) in [("exploration.start", e.start), ("exploration.end", e.end)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(key, format!("must lie in [0, 1], got {v}"));
            }
        }
        if self.bptt_horizon == Some(0) {
            return bad("bptt_horizon", "must be at least 1".into());
        }
        if let Some(r) = &self.replay {
            if r.capacity == 0 {
                return bad("replay.capacity", "must be at least 1".into());
            }
            if r.batch_size == 0 || r.batch_size > r.capacity {
                return bad("replay.batch_size", format!("must lie in [1, {}]", r.capacity));
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) {
            return bad("adam.beta1", format!("must lie in [0, 1), got {}", a.beta1));
        }
        if !(0.0..1.0).contains(&a.beta2) {
            return bad("adam.beta2", format!("must lie in [0, 1), got {}", a.beta2));
        }
        if a.epsilon <= 0.0 {
            return bad("adam.epsilon", format!("must be positive, got {}", a.epsilon));
        }
        Ok(())
    }
}

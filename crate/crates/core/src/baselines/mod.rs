//! Every runnable policy behind one interface: the full hierarchical agent,
//! its six ablations, two linear contextual bandits, and uniform random.

mod bandit;
mod hrl;
mod random;

pub use bandit::{LinUcbArm, LinUcbPolicy, ThompsonArm, ThompsonPolicy};
pub use hrl::HrlPolicy;
pub use random::RandomPolicy;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, GoalVector, UpdateReport};
use crate::env::{ItemEntry, ItemId, UserHistory, UserProfile};
use crate::error::{Error, Result};
use crate::nn::ParameterSet;
use crate::reward::{RewardShaping, ShapedInteractionReward, ShapedSessionReward};
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    Ab1NoSessionIntent,
    Ab2NoHrl,
    Ab3NoHrlNoSessionIntent,
    Ab4VanillaDqn,
    Ab5NoNovelty,
    Ab6NoDiversity,
    Linucb,
    Thompson,
    Random,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Full,
        Variant::Ab1NoSessionIntent,
        Variant::Ab2NoHrl,
        Variant::Ab3NoHrlNoSessionIntent,
        Variant::Ab4VanillaDqn,
        Variant::Ab5NoNovelty,
        Variant::Ab6NoDiversity,
        Variant::Linucb,
        Variant::Thompson,
        Variant::Random,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Ab1NoSessionIntent => "ab1_no_session_intent",
            Variant::Ab2NoHrl => "ab2_no_hrl",
            Variant::Ab3NoHrlNoSessionIntent => "ab3_no_hrl_no_session_intent",
            Variant::Ab4VanillaDqn => "ab4_vanilla_dqn",
            Variant::Ab5NoNovelty => "ab5_no_novelty",
            Variant::Ab6NoDiversity => "ab6_no_diversity",
            Variant::Linucb => "linucb",
            Variant::Thompson => "thompson",
            Variant::Random => "random",
        }
    }

    /// Variants built on the hierarchical agent (with or without its
    /// session level).
    pub fn is_agent(self) -> bool {
        !matches!(self, Variant::Linucb | Variant::Thompson | Variant::Random)
    }

    pub fn is_hierarchical(self) -> bool {
        self.is_agent() && !matches!(self, Variant::Ab2NoHrl | Variant::Ab3NoHrlNoSessionIntent)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::config("variants", format!("unknown variant tag `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// LinUCB exploration width.
    pub ucb_alpha: f64,
    /// Observation noise std of the Thompson posterior.
    pub thompson_noise_std: f64,
    /// Multiplies the posterior std when sampling; 0 is greedy on the mean.
    pub thompson_scale: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            ucb_alpha: 1.0,
            thompson_noise_std: 0.1,
            thompson_scale: 1.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ucb_alpha >= 0.0 && self.ucb_alpha.is_finite()) {
            return Err(Error::config("baselines.ucb_alpha", "must be a finite value ≥ 0"));
        }
        if !(self.thompson_noise_std > 0.0 && self.thompson_noise_std.is_finite()) {
            return Err(Error::config("baselines.thompson_noise_std", "must be positive"));
        }
        if !(self.thompson_scale >= 0.0 && self.thompson_scale.is_finite()) {
            return Err(Error::config("baselines.thompson_scale", "must be a finite value ≥ 0"));
        }
        Ok(())
    }
}

/// Everything a policy needs at construction.
#[derive(Clone, Debug)]
pub struct VariantBase {
    pub agent: AgentConfig,
    pub baselines: BaselineConfig,
    pub shaping: RewardShaping,
    pub embedding_dim: usize,
    pub session_length: usize,
    pub seed: u64,
}

/// One decision point.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub user: &'a UserProfile,
    pub items: &'a [ItemEntry],
    pub candidates: &'a [ItemId],
    /// 1-based step within the user's trajectory.
    pub step: usize,
}

/// What the environment returned for the consumed item.
#[derive(Clone, Debug)]
pub struct Feedback {
    pub step: usize,
    pub item: ItemId,
    pub env_reward: f64,
    pub interaction: ShapedInteractionReward,
    /// Present when the step closes a session.
    pub session: Option<ShapedSessionReward>,
    pub terminal: bool,
    pub next_candidates: Arc<[ItemId]>,
}

/// The interface the harness drives. Per user: `begin_user`, then for every
/// step `begin_session` (at session starts), `act` or `rank`, `observe`, and
/// optionally `update`.
pub trait Policy: Send {
    fn variant(&self) -> Variant;

    /// Shaping applied to the rewards this policy learns from.
    fn shaping(&self) -> RewardShaping;

    /// Resets per-user state and folds in an already consumed history.
    fn begin_user(&mut self, user: &UserProfile, items: &[ItemEntry], history: &UserHistory) -> Result<()>;

    fn begin_session(&mut self, step: usize) -> Result<()>;

    fn act(&mut self, ctx: &StepContext<'_>, rng: &mut SimRng) -> Result<ItemId>;

    fn rank(&mut self, ctx: &StepContext<'_>, k: usize, rng: &mut SimRng) -> Result<Vec<ItemId>>;

    /// Records the consumption; learning waits for `update`.
    fn observe(&mut self, ctx: &StepContext<'_>, feedback: &Feedback) -> Result<()>;

    /// Learns from everything observed since the last call.
    fn update(&mut self, items: &[ItemEntry]) -> Result<UpdateReport>;

    fn current_goal(&self) -> Option<&GoalVector> {
        None
    }

    /// Number of parameter updates applied so far.
    fn updates(&self) -> u64;

    fn parameters(&self) -> Result<ParameterSet>;

    fn load_parameters(&mut self, params: &ParameterSet) -> Result<()>;
}

pub fn build_variant(variant: Variant, base: &VariantBase) -> Result<Box<dyn Policy>> {
    base.baselines.validate()?;
    let d_context = 2 * base.embedding_dim;
    Ok(match variant {
        Variant::Linucb => Box::new(LinUcbPolicy::new(d_context, base.baselines.ucb_alpha)),
        Variant::Thompson => Box::new(ThompsonPolicy::new(
            d_context,
            base.baselines.thompson_noise_std,
            base.baselines.thompson_scale,
        )),
        Variant::Random => Box::new(RandomPolicy::new()),
        _ => Box::new(HrlPolicy::new(variant, base)?),
    })
}

//! Training and test protocols, metric aggregation over seeds, and the
//! goal/intent analysis.
//!
//! Training runs every user through `n_train` online steps with one shared
//! policy. Step 1 seeds the history with the noise-free best item; learning
//! starts at step 2 and the session level learns whenever `t mod L = 0`.
//! Evaluation continues each user's trajectory for `n_test` steps with frozen
//! parameters: the policy ranks the catalog, every item of the top-K slate is
//! scored against the simulator, and the top-1 item is consumed.

mod metrics;
mod separability;

pub use metrics::{
    metric_diversity, metric_hit_rate, metric_novelty, MetricSummary, MetricsRecord, NoveltyMetric, RunMetrics,
};
pub use separability::{
    goal_separability, probe_r2, tercile_distances, GoalSample, SeparabilityReport, Tercile, MIN_SESSIONS,
};

use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{build_variant, Feedback, Policy, StepContext, Variant, VariantBase};
use crate::env::{Environment, ItemEntry, ItemId, UserHistory, UserId};
use crate::error::{Error, Result};
use crate::io::ExperimentConfig;
use crate::reward::RewardShaping;
use crate::rng::stream;
use metrics::MetricAccumulator;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserOrder {
    /// Ascending user id.
    #[default]
    Ascending,
    /// A per-seed permutation from the `user-order` stream.
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub n_train: usize,
    pub user_order: UserOrder,
    /// Write the per-transition training log next to the metrics.
    pub write_log: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_train: 40,
            user_order: UserOrder::Ascending,
            write_log: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, session_length: usize) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::config("train.n_train", "must be at least 1"));
        }
        if session_length > self.n_train {
            return Err(Error::config(
                "train.n_train",
                format!("must be at least the session length ({session_length})"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub n_test: usize,
    /// Raw rewards strictly above this count as hits.
    pub hit_threshold: f64,
    pub novelty_metric: NoveltyMetric,
    /// Label-shuffled controls in the goal analysis.
    pub null_shuffles: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            n_test: 10,
            hit_threshold: 0.5,
            novelty_metric: NoveltyMetric::Distance,
            null_shuffles: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("eval.k", "must be at least 1"));
        }
        if self.n_test == 0 {
            return Err(Error::config("eval.n_test", "must be at least 1"));
        }
        if !self.hit_threshold.is_finite() {
            return Err(Error::config("eval.hit_threshold", "must be finite"));
        }
        Ok(())
    }
}

/// One training step as seen by the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub user: usize,
    pub step: usize,
    pub session: usize,
    pub item: usize,
    pub env_reward: f64,
    /// Interaction reward after the policy's shaping.
    pub shaped_reward: f64,
    /// Session reward, at session ends.
    pub session_reward: Option<f64>,
    /// Ground-truth intent at this step.
    pub intent: f64,
    /// Step 1: picked by the simulator, not the policy.
    pub bootstrap: bool,
    pub interaction_loss: Option<f64>,
    pub session_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<TrainRecord>,
    /// Each user's consumptions, indexed by user id.
    pub histories: Vec<UserHistory>,
}

impl TrainOutcome {
    pub fn session_updates(&self, user: usize) -> usize {
        self.log
            .iter()
            .filter(|r| r.user == user && r.session_loss.is_some())
            .count()
    }
}

/// One test step: the slate and what the simulator made of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStep {
    pub user: usize,
    pub step: usize,
    pub slate: Vec<usize>,
    pub rewards: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub metrics: RunMetrics,
    pub steps: Vec<EvalStep>,
    /// Goals proposed at test-time session starts, when the policy has them.
    pub goals: Vec<GoalSample>,
}

fn user_order(env: &Environment, order: UserOrder) -> Vec<UserId> {
    let mut ids: Vec<UserId> = (0..env.users().len()).map(UserId).collect();
    if order == UserOrder::Shuffled {
        ids.shuffle(&mut stream(env.seed(), "user-order", &[]));
    }
    ids
}

fn embedding(items: &[ItemEntry], id: ItemId) -> &crate::env::EmbeddingVector {
    &items[id.0].embedding
}

/// Shaped rewards for the consumption just appended to `history`.
fn feedback(
    shaping: &RewardShaping,
    items: &[ItemEntry],
    history: &UserHistory,
    step: usize,
    session_length: usize,
    terminal: bool,
    next_candidates: Arc<[ItemId]>,
    with_session: bool,
) -> Result<Feedback> {
    let consumed = history.items();
    let n = consumed.len();
    let item = consumed[n - 1];
    let env_reward = history.rewards()[n - 1];
    let prev = (n >= 2).then(|| embedding(items, consumed[n - 2]));
    let interaction = shaping.interaction(env_reward, embedding(items, item), prev)?;
    let session = if with_session && step % session_length == 0 {
        let from = n - session_length.min(n);
        let embs: Vec<_> = consumed[from..].iter().map(|&i| embedding(items, i)).collect();
        Some(shaping.session(&history.rewards()[from..], &embs)?)
    } else {
        None
    };
    Ok(Feedback {
        step,
        item,
        env_reward,
        interaction,
        session,
        terminal,
        next_candidates,
    })
}

/// Online training. Users are visited in `cfg.user_order`; the policy is
/// shared across users.
pub fn train(env: &mut Environment, policy: &mut dyn Policy, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let session_length = env.session_length();
    cfg.validate(session_length)?;
    let seed = env.seed();
    let population = env.population().clone();
    let items = population.items.as_slice();
    let shaping = policy.shaping();
    let mut histories = vec![UserHistory::new(); population.users.len()];
    let mut log = Vec::with_capacity(population.users.len() * cfg.n_train);

    for uid in user_order(env, cfg.user_order) {
        let user = &population.users[uid.0];
        let mut noise = stream(seed, "noise", &[uid.0 as u64]);
        let mut explore = stream(seed, "explore", &[uid.0 as u64]);
        let mut history = UserHistory::new();

        let first = env.best_item(uid, 1, None, &env.candidates(&history))?;
        let reward = env.simulate_reward(uid, first, 1, None, &mut noise)?;
        env.advance_history(&mut history, first, reward)?;
        let fb = feedback(&shaping, items, &history, 1, session_length, cfg.n_train == 1, Arc::from([]), true)?;
        log.push(TrainRecord {
            user: uid.0,
            step: 1,
            session: 1,
            item: first.0,
            env_reward: reward,
            shaped_reward: fb.interaction.total,
            session_reward: fb.session.map(|s| s.total),
            intent: env.session_intent(uid, 1)?,
            bootstrap: true,
            interaction_loss: None,
            session_loss: None,
        });
        policy.begin_user(user, items, &history)?;

        for t in 2..=cfg.n_train {
            if t == 2 || (t - 1) % session_length == 0 {
                policy.begin_session(t)?;
            }
            let candidates = env.candidates(&history);
            let ctx = StepContext {
                user,
                items,
                candidates: &candidates,
                step: t,
            };
            let action = policy.act(&ctx, &mut explore)?;
            let prev = history.prev();
            let reward = env.simulate_reward(uid, action, t, prev, &mut noise)?;
            env.advance_history(&mut history, action, reward)?;
            let next: Arc<[ItemId]> = env.candidates(&history).into();
            let terminal = t == cfg.n_train;
            let fb = feedback(&shaping, items, &history, t, session_length, terminal, next, true)?;
            policy.observe(&ctx, &fb)?;
            let report = policy.update(items)?;
            log.push(TrainRecord {
                user: uid.0,
                step: t,
                session: env.session_index(t),
                item: action.0,
                env_reward: reward,
                shaped_reward: fb.interaction.total,
                session_reward: fb.session.map(|s| s.total),
                intent: env.session_intent(uid, t)?,
                bootstrap: false,
                interaction_loss: report.interaction_loss,
                session_loss: report.session_loss,
            });
        }
        histories[uid.0] = history;
    }
    Ok(TrainOutcome { log, histories })
}

/// Test roll-out from each user's training history. Parameters are never
/// updated; the policy only folds the consumed top-1 items into its state.
pub fn evaluate(
    env: &mut Environment,
    policy: &mut dyn Policy,
    histories: &[UserHistory],
    cfg: &EvalConfig,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let population = env.population().clone();
    if histories.len() != population.users.len() {
        return Err(Error::Argument(format!(
            "{} histories for {} users",
            histories.len(),
            population.users.len()
        )));
    }
    let items = population.items.as_slice();
    let session_length = env.session_length();
    let shaping = policy.shaping();
    let seed = env.seed();
    let mut acc = MetricAccumulator::default();
    let mut steps = Vec::with_capacity(histories.len() * cfg.n_test);
    let mut goals = Vec::new();

    for (u, user) in population.users.iter().enumerate() {
        let uid = UserId(u);
        let mut noise = stream(seed, "eval-noise", &[u as u64]);
        let mut explore = stream(seed, "eval-explore", &[u as u64]);
        let mut history = histories[u].clone();
        policy.begin_user(user, items, &history)?;
        let start = history.len() + 1;
        for t in start..start + cfg.n_test {
            if t == start || (t - 1) % session_length == 0 {
                policy.begin_session(t)?;
                if let Some(g) = policy.current_goal() {
                    goals.push(GoalSample {
                        user: u,
                        session: env.session_index(t),
                        goal: g.values.clone(),
                        intent: env.session_intent(uid, t)?,
                    });
                }
            }
            let candidates = env.candidates(&history);
            let ctx = StepContext {
                user,
                items,
                candidates: &candidates,
                step: t,
            };
            let slate = policy.rank(&ctx, cfg.k, &mut explore)?;
            if slate.is_empty() {
                return Err(Error::State("policy returned an empty slate".into()));
            }
            let prev = history.prev();
            let mut rewards = Vec::with_capacity(slate.len());
            for &item in &slate {
                rewards.push(env.simulate_reward(uid, item, t, prev, &mut noise)?);
            }
            let embs: Vec<_> = slate.iter().map(|&i| embedding(items, i)).collect();
            let novelty = match prev {
                Some(p) => Some(metric_novelty(&embs, embedding(items, p), cfg.novelty_metric)?),
                None => None,
            };
            acc.push(
                rewards.iter().sum::<f64>() / rewards.len() as f64,
                metric_hit_rate(&rewards, cfg.hit_threshold)?,
                metric_diversity(&embs)?,
                novelty,
            );

            env.advance_history(&mut history, slate[0], rewards[0])?;
            let next: Arc<[ItemId]> = env.candidates(&history).into();
            let terminal = t + 1 == start + cfg.n_test;
            let fb = feedback(&shaping, items, &history, t, session_length, terminal, next, false)?;
            policy.observe(&ctx, &fb)?;
            steps.push(EvalStep {
                user: u,
                step: t,
                slate: slate.iter().map(|i| i.0).collect(),
                rewards,
            });
        }
    }
    Ok(EvalOutcome {
        metrics: acc.finish(),
        steps,
        goals,
    })
}

/// Everything produced by one (seed, variant) pair.
pub struct RunOutcome {
    pub seed: u64,
    pub variant: Variant,
    pub policy: Box<dyn Policy>,
    pub train: TrainOutcome,
    pub eval: EvalOutcome,
    pub separability: Option<SeparabilityReport>,
}

pub fn variant_base(config: &ExperimentConfig, seed: u64) -> VariantBase {
    VariantBase {
        agent: config.agent.clone(),
        baselines: config.baselines.clone(),
        shaping: config.shaping,
        embedding_dim: config.env.embedding_dim,
        session_length: config.env.session_length,
        seed,
    }
}

/// Generates the population for `seed`, trains, evaluates, and analyses goals.
pub fn run_single(config: &ExperimentConfig, seed: u64, variant: Variant) -> Result<RunOutcome> {
    let mut env = Environment::generate(&config.env, seed)?;
    let mut policy = build_variant(variant, &variant_base(config, seed))?;
    let train_outcome = train(&mut env, policy.as_mut(), &config.train)?;
    let eval = evaluate(&mut env, policy.as_mut(), &train_outcome.histories, &config.eval)?;
    let separability = if eval.goals.len() >= MIN_SESSIONS {
        Some(goal_separability(&eval.goals, seed, config.eval.null_shuffles)?)
    } else {
        None
    };
    Ok(RunOutcome {
        seed,
        variant,
        policy,
        train: train_outcome,
        eval,
        separability,
    })
}

/// Compact per-run summary kept by [`run_experiment`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub variant: Variant,
    pub metrics: RunMetrics,
    pub updates: u64,
    pub transitions: usize,
    pub session_updates: usize,
    pub separability: Option<SeparabilityReport>,
    /// Present when the config asks for training logs.
    #[serde(skip)]
    pub train_log: Option<Vec<TrainRecord>>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResults {
    /// One row per variant, in config order.
    pub table: Vec<MetricsRecord>,
    /// Variant-major, then seed order.
    pub runs: Vec<RunRecord>,
}

impl ExperimentResults {
    pub fn record(&self, variant: Variant) -> Option<&MetricsRecord> {
        self.table.iter().find(|r| r.variant == variant.tag())
    }

    pub fn runs_of(&self, variant: Variant) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.variant == variant)
    }
}

/// Every configured variant on every configured seed. Runs execute in
/// parallel; results are collected in a fixed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let jobs: Vec<(Variant, u64)> = config
        .variants
        .iter()
        .flat_map(|&v| config.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let out = run_single(config, seed, variant)?;
            Ok(RunRecord {
                seed,
                variant,
                metrics: out.eval.metrics,
                updates: out.policy.updates(),
                transitions: out.train.log.len(),
                session_updates: out.train.log.iter().filter(|r| r.session_loss.is_some()).count(),
                separability: out.separability,
                train_log: config.train.write_log.then_some(out.train.log),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Vec::with_capacity(config.variants.len());
    for &variant in &config.variants {
        let per_seed: Vec<(u64, RunMetrics)> = runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| (r.seed, r.metrics))
            .collect();
        table.push(MetricsRecord::aggregate(variant.tag(), &per_seed)?);
    }
    Ok(ExperimentResults { table, runs })
}

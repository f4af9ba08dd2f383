//! Synthetic recommendation environment.
//!
//! Rewards follow a discrete choice model:
//!
//! ```text
//! r(u, i, t) = A(u, i) + E(u, t) · N(i, prev) + r_u + r_i + noise
//! A(u, i)    = e_uᵀ e_i                     (unit-norm embeddings)
//! N(i, prev) = ‖e_i − e_prev‖₂              (0 before the first consumption)
//! E(u, t)    = E0_u + E_session(u, ⌈t / L⌉)
//! ```

mod config;
mod embedding;
mod population;

pub use config::{EnvConfig, NoiseReading, NormalParams};
pub use embedding::{euclidean, item_novelty, relevance, EmbeddingVector};
pub use population::{generate_population, ItemEntry, ItemId, Population, UserId, UserProfile};

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, SimRng};

/// Per-(user, session) intent fluctuations, drawn on first access.
///
/// Each value comes from its own keyed substream, so the value of a key does
/// not depend on the order in which keys are first touched.
#[derive(Clone, Debug)]
pub struct SessionIntentTable {
    seed: u64,
    params: NormalParams,
    enabled: bool,
    drawn: HashMap<(usize, usize), f64>,
}

impl SessionIntentTable {
    pub fn new(seed: u64, params: NormalParams, enabled: bool) -> Self {
        SessionIntentTable {
            seed,
            params,
            enabled,
            drawn: HashMap::new(),
        }
    }

    pub fn get(&mut self, user: UserId, session: usize) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let (seed, params) = (self.seed, self.params);
        *self.drawn.entry((user.0, session)).or_insert_with(|| {
            let mut rng = stream(seed, "intent", &[user.0 as u64, session as u64]);
            params.sample(&mut rng)
        })
    }

    pub fn len(&self) -> usize {
        self.drawn.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drawn.is_empty()
    }
}

/// Consumed items of one user, oldest first, with the observed rewards.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserHistory {
    items: Vec<ItemId>,
    rewards: Vec<f64>,
}

impl UserHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The reference item for novelty.
    pub fn prev(&self) -> Option<ItemId> {
        self.items.last().copied()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.contains(&item)
    }

    /// Appends without a catalog check; see [`Environment::advance_history`].
    pub fn push(&mut self, item: ItemId, reward: f64) {
        self.items.push(item);
        self.rewards.push(reward);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, f64)> + '_ {
        self.items.iter().copied().zip(self.rewards.iter().copied())
    }
}

/// A generated population plus the lazily drawn session intents.
#[derive(Clone, Debug)]
pub struct Environment {
    config: EnvConfig,
    seed: u64,
    population: Population,
    intent: SessionIntentTable,
}

impl Environment {
    pub fn generate(config: &EnvConfig, seed: u64) -> Result<Self> {
        let population = generate_population(config, seed)?;
        Ok(Self::with_population(config, seed, population))
    }

    /// Uses a pinned population (e.g. imported from disk).
    pub fn with_population(config: &EnvConfig, seed: u64, population: Population) -> Self {
        Environment {
            config: config.clone(),
            seed,
            intent: SessionIntentTable::new(seed, config.session_intent, config.session_intent_enabled),
            population,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn users(&self) -> &[UserProfile] {
        &self.population.users
    }

    pub fn items(&self) -> &[ItemEntry] {
        &self.population.items
    }

    pub fn user(&self, id: UserId) -> Result<&UserProfile> {
        self.population
            .users
            .get(id.0)
            .ok_or_else(|| Error::Lookup(format!("unknown user {}", id.0)))
    }

    pub fn item(&self, id: ItemId) -> Result<&ItemEntry> {
        self.population
            .items
            .get(id.0)
            .ok_or_else(|| Error::Lookup(format!("unknown item {}", id.0)))
    }

    pub fn session_length(&self) -> usize {
        self.config.session_length
    }

    /// `s(t) = ⌈t / L⌉` for 1-based steps.
    pub fn session_index(&self, step: usize) -> usize {
        session_index(step, self.config.session_length)
    }

    /// `E0_u + E_session(u, s(t))`.
    pub fn session_intent(&mut self, user: UserId, step: usize) -> Result<f64> {
        if step == 0 {
            return Err(Error::Argument("steps are 1-based".into()));
        }
        let intrinsic = self.user(user)?.intrinsic_intent;
        let session = self.session_index(step);
        Ok(intrinsic + self.intent.get(user, session))
    }

    pub fn intent_table(&self) -> &SessionIntentTable {
        &self.intent
    }

    /// Reward without the noise term.
    pub fn expected_reward(&mut self, user: UserId, item: ItemId, step: usize, prev: Option<ItemId>) -> Result<f64> {
        let intent = self.session_intent(user, step)?;
        let u = self.user(user)?;
        let i = self.item(item)?;
        let novelty = match prev {
            Some(p) => item_novelty(&i.embedding, &self.item(p)?.embedding)?,
            None => 0.0,
        };
        Ok(relevance(&u.embedding, &i.embedding)? + intent * novelty + u.fixed_effect + i.fixed_effect)
    }

    /// One noisy reward draw. With noise disabled the rng is not touched.
    pub fn simulate_reward(
        &mut self,
        user: UserId,
        item: ItemId,
        step: usize,
        prev: Option<ItemId>,
        rng: &mut SimRng,
    ) -> Result<f64> {
        let base = self.expected_reward(user, item, step, prev)?;
        Ok(base + self.sample_noise(rng))
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if !self.config.noise_enabled {
            return 0.0;
        }
        let std = self.config.noise_std();
        if std == 0.0 {
            return self.config.noise.mean;
        }
        Normal::new(self.config.noise.mean, std)
            .expect("validated noise parameters")
            .sample(rng)
    }

    /// Items the user may be shown at the next step.
    pub fn candidates(&self, history: &UserHistory) -> Vec<ItemId> {
        let all = (0..self.population.items.len()).map(ItemId);
        if self.config.mask_history {
            all.filter(|i| !history.contains(*i)).collect()
        } else {
            all.collect()
        }
    }

    /// Noise-free reward argmax over `candidates`; used to seed a user's
    /// history at step 1. Ties go to the smallest id.
    pub fn best_item(&mut self, user: UserId, step: usize, prev: Option<ItemId>, candidates: &[ItemId]) -> Result<ItemId> {
        let mut best: Option<(f64, ItemId)> = None;
        for &item in candidates {
            let r = self.expected_reward(user, item, step, prev)?;
            let better = match best {
                None => true,
                Some((b, id)) => r > b || (r == b && item < id),
            };
            if better {
                best = Some((r, item));
            }
        }
        best.map(|(_, id)| id)
            .ok_or_else(|| Error::Argument("no candidates".into()))
    }

    /// Appends a consumption; the item becomes the novelty reference.
    pub fn advance_history(&self, history: &mut UserHistory, item: ItemId, reward: f64) -> Result<()> {
        self.item(item)?;
        history.items.push(item);
        history.rewards.push(reward);
        Ok(())
    }
}

pub fn session_index(step: usize, session_length: usize) -> usize {
    step.div_ceil(session_length)
}

#[cfg(test)]
mod tests;

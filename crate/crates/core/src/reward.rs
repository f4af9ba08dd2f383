//! Shaped rewards fed to the two learning levels.
//!
//! Interaction level: raw environment reward plus the distance of the consumed
//! item from the previously consumed one. Session level: mean rating over the
//! session plus the mean pairwise distance of the session's items.

use serde::{Deserialize, Serialize};

use crate::env::{euclidean, EmbeddingVector};
use crate::error::{ensure_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapedInteractionReward {
    pub base: f64,
    pub novelty: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapedSessionReward {
    pub avg_rating: f64,
    pub diversity: f64,
    pub total: f64,
}

/// Weights on the novelty and diversity terms. Both are 1 for the full model;
/// the ablations that drop a term set its weight to 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardShaping {
    pub novelty_weight: f64,
    pub diversity_weight: f64,
}

impl Default for RewardShaping {
    fn default() -> Self {
        RewardShaping {
            novelty_weight: 1.0,
            diversity_weight: 1.0,
        }
    }
}

impl RewardShaping {
    pub fn interaction(
        &self,
        env_reward: f64,
        item: &EmbeddingVector,
        prev: Option<&EmbeddingVector>,
    ) -> Result<ShapedInteractionReward> {
        let distance = match prev {
            Some(p) => {
                ensure_len("novelty operands", p.dim(), item.dim())?;
                euclidean(item.as_slice(), p.as_slice())
            }
            None => 0.0,
        };
        let novelty = if self.novelty_weight == 0.0 {
            0.0
        } else {
            self.novelty_weight * distance
        };
        Ok(ShapedInteractionReward {
            base: env_reward,
            novelty,
            total: env_reward + novelty,
        })
    }

    pub fn session(&self, ratings: &[f64], items: &[&EmbeddingVector]) -> Result<ShapedSessionReward> {
        if ratings.is_empty() {
            return Err(Error::Argument("session reward needs at least one rating".into()));
        }
        if ratings.len() != items.len() {
            return Err(Error::Argument(format!(
                "{} ratings but {} items",
                ratings.len(),
                items.len()
            )));
        }
        let avg_rating = ratings.iter().sum::<f64>() / ratings.len() as f64;
        let diversity = if self.diversity_weight == 0.0 {
            0.0
        } else {
            self.diversity_weight * pairwise_dissimilarity(items)?
        };
        Ok(ShapedSessionReward {
            avg_rating,
            diversity,
            total: avg_rating + diversity,
        })
    }
}

/// Unweighted interaction reward.
pub fn interaction_reward(
    env_reward: f64,
    item: &EmbeddingVector,
    prev: Option<&EmbeddingVector>,
) -> Result<ShapedInteractionReward> {
    RewardShaping::default().interaction(env_reward, item, prev)
}

/// Unweighted session reward.
pub fn session_reward(ratings: &[f64], items: &[&EmbeddingVector]) -> Result<ShapedSessionReward> {
    RewardShaping::default().session(ratings, items)
}

/// Mean Euclidean distance over all unordered pairs; 0 for a single item.
pub fn pairwise_dissimilarity(items: &[&EmbeddingVector]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Argument("pairwise dissimilarity of an empty list".into()));
    }
    let dim = items[0].dim();
    let n = items.len();
    if n == 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for a in 0..n {
        ensure_len("dissimilarity operand", items[a].dim(), dim)?;
        for b in a + 1..n {
            total += euclidean(items[a].as_slice(), items[b].as_slice());
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(mean, std)` of a normal distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalParams {
    pub mean: f64,
    pub std: f64,
}

impl NormalParams {
    pub const fn new(mean: f64, std: f64) -> Self {
        NormalParams { mean, std }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.std == 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.std)
            .expect("validated normal parameters")
            .sample(rng)
    }
}

/// How the second parameter of the noise distribution is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReading {
    Std,
    Variance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub embedding_dim: usize,
    pub session_length: usize,
    pub user_effect: NormalParams,
    pub item_effect: NormalParams,
    pub intrinsic_intent: NormalParams,
    pub session_intent: NormalParams,
    /// The second field is a std or a variance depending on `noise_reading`.
    pub noise: NormalParams,
    pub noise_reading: NoiseReading,
    pub noise_enabled: bool,
    pub session_intent_enabled: bool,
    /// Drop already-consumed items from the candidate set.
    pub mask_history: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            num_users: 200,
            num_items: 500,
            embedding_dim: 16,
            session_length: 5,
            user_effect: NormalParams::new(0.5, 1.0),
            item_effect: NormalParams::new(0.5, 1.0),
            intrinsic_intent: NormalParams::new(0.0, 1.0),
            session_intent: NormalParams::new(0.0, 1.0),
            noise: NormalParams::new(0.0, 0.1),
            noise_reading: NoiseReading::Std,
            noise_enabled: true,
            session_intent_enabled: true,
            mask_history: false,
        }
    }
}

impl EnvConfig {
    /// 10,000 users by 10,000 items.
    pub fn large_scale() -> Self {
        EnvConfig {
            num_users: 10_000,
            num_items: 10_000,
            ..Self::default()
        }
    }

    pub fn noise_std(&self) -> f64 {
        match self.noise_reading {
            NoiseReading::Std => self.noise.std,
            NoiseReading::Variance => self.noise.std.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.num_users", self.num_users),
            ("env.num_items", self.num_items),
            ("env.embedding_dim", self.embedding_dim),
            ("env.session_length", self.session_length),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        let dists = [
            ("env.user_effect", self.user_effect),
            ("env.item_effect", self.item_effect),
            ("env.intrinsic_intent", self.intrinsic_intent),
            ("env.session_intent", self.session_intent),
            ("env.noise", self.noise),
        ];
        for (key, d) in dists {
            if !d.mean.is_finite() {
                return Err(Error::config(format!("{key}.mean"), "must be finite"));
            }
            if !(d.std.is_finite() && d.std >= 0.0) {
                return Err(Error::config(format!("{key}.std"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use crate::env::{euclidean, EmbeddingVector};
use crate::error::{Error, Result};
use crate::reward::pairwise_dissimilarity;

/// How the novelty metric turns a distance into a score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoveltyMetric {
    /// Mean distance from the previous item; grows with novelty.
    #[default]
    Distance,
    /// `1 − distance`.
    OneMinusDistance,
}

/// Fraction of rewards strictly above `threshold`.
pub fn metric_hit_rate(rewards: &[f64], threshold: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Argument("hit rate of an empty list".into()));
    }
    let hits = rewards.iter().filter(|&&r| r > threshold).count();
    Ok(hits as f64 / rewards.len() as f64)
}

/// Mean pairwise distance of the slate; 0 for a single item.
pub fn metric_diversity(items: &[&EmbeddingVector]) -> Result<f64> {
    pairwise_dissimilarity(items)
}

pub fn metric_novelty(items: &[&EmbeddingVector], prev: &EmbeddingVector, mode: NoveltyMetric) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Argument("novelty of an empty list".into()));
    }
    let mut total = 0.0;
    for item in items {
        if item.dim() != prev.dim() {
            return Err(Error::shape(format!(
                "novelty operands: {} vs {}",
                item.dim(),
                prev.dim()
            )));
        }
        let d = euclidean(item.as_slice(), prev.as_slice());
        total += match mode {
            NoveltyMetric::Distance => d,
            NoveltyMetric::OneMinusDistance => 1.0 - d,
        };
    }
    Ok(total / items.len() as f64)
}

/// The four evaluation metrics of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub avg_reward: f64,
    pub hit_rate_at_k: f64,
    pub diversity: f64,
    pub novelty: f64,
}

/// Per-seed values of one metric with their mean and standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over `√runs`; 0 for a single run.
    pub std_error: f64,
    pub per_seed: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("no runs to aggregate".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_error = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt() / n.sqrt()
        };
        Ok(MetricSummary {
            mean,
            std_error,
            per_seed: values,
        })
    }
}

/// Metrics of one variant aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub variant: String,
    pub seeds: Vec<u64>,
    pub avg_reward: MetricSummary,
    pub hit_rate_at_k: MetricSummary,
    pub diversity: MetricSummary,
    pub novelty: MetricSummary,
}

impl MetricsRecord {
    /// `runs` pairs each seed with its metrics, in reporting order.
    pub fn aggregate(variant: &str, runs: &[(u64, RunMetrics)]) -> Result<Self> {
        let column = |f: fn(&RunMetrics) -> f64| MetricSummary::from_values(runs.iter().map(|(_, m)| f(m)).collect());
        Ok(MetricsRecord {
            variant: variant.to_string(),
            seeds: runs.iter().map(|(s, _)| *s).collect(),
            avg_reward: column(|m| m.avg_reward)?,
            hit_rate_at_k: column(|m| m.hit_rate_at_k)?,
            diversity: column(|m| m.diversity)?,
            novelty: column(|m| m.novelty)?,
        })
    }

    pub fn run(&self, index: usize) -> Option<RunMetrics> {
        Some(RunMetrics {
            avg_reward: *self.avg_reward.per_seed.get(index)?,
            hit_rate_at_k: *self.hit_rate_at_k.per_seed.get(index)?,
            diversity: *self.diversity.per_seed.get(index)?,
            novelty: *self.novelty.per_seed.get(index)?,
        })
    }
}

/// Running sums over evaluation steps.
#[derive(Clone, Debug, Default)]
pub(crate) struct MetricAccumulator {
    reward: f64,
    hit_rate: f64,
    diversity: f64,
    novelty: f64,
    steps: usize,
    novelty_steps: usize,
}

impl MetricAccumulator {
    pub fn push(&mut self, reward: f64, hit_rate: f64, diversity: f64, novelty: Option<f64>) {
        self.reward += reward;
        self.hit_rate += hit_rate;
        self.diversity += diversity;
        self.steps += 1;
        if let Some(n) = novelty {
            self.novelty += n;
            self.novelty_steps += 1;
        }
    }

    pub fn finish(&self) -> RunMetrics {
        let per = |v: f64, n: usize| if n == 0 { 0.0 } else { v / n as f64 };
        RunMetrics {
            avg_reward: per(self.reward, self.steps),
            hit_rate_at_k: per(self.hit_rate, self.steps),
            diversity: per(self.diversity, self.steps),
            novelty: per(self.novelty, self.novelty_steps),
        }
    }
}

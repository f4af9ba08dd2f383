//! How much of the ground-truth session intent the proposed goals carry.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::env::euclidean;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Fewest sessions the analysis accepts.
pub const MIN_SESSIONS: usize = 30;
/// Share of sessions used to fit the probe.
const TRAIN_FRACTION: f64 = 0.8;

/// Intent bands cut at ±0.5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tercile {
    High,
    Mid,
    Low,
}

impl Tercile {
    pub fn of(intent: f64) -> Self {
        if intent > 0.5 {
            Tercile::High
        } else if intent < -0.5 {
            Tercile::Low
        } else {
            Tercile::Mid
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Tercile::High => "high",
            Tercile::Mid => "mid",
            Tercile::Low => "low",
        }
    }
}

/// One proposed goal next to the intent the user actually had in that session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSample {
    pub user: usize,
    pub session: usize,
    pub goal: Vec<f64>,
    pub intent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub samples: Vec<GoalSample>,
    /// Held-out R² of a least-squares probe from goal to intent.
    pub probe_r2: f64,
    /// Mean goal distance over pairs in the same tercile.
    pub intra_distance: f64,
    /// Mean goal distance over pairs in different terciles.
    pub inter_distance: f64,
    /// `intra / inter`; 1 when all goals coincide.
    pub distance_ratio: f64,
    /// Held-out R² after shuffling the intents, one per shuffle.
    pub null_r2: Vec<f64>,
}

impl SeparabilityReport {
    /// Fraction of shuffled controls whose R² is below `bound`.
    pub fn null_fraction_below(&self, bound: f64) -> f64 {
        if self.null_r2.is_empty() {
            return 0.0;
        }
        self.null_r2.iter().filter(|&&r| r < bound).count() as f64 / self.null_r2.len() as f64
    }
}

/// Fits `intent ≈ w·goal + b` on `train` and scores R² on `test`
/// (relative to the held-out mean).
pub fn probe_r2(goals: &[&[f64]], intents: &[f64], train: &[usize], test: &[usize]) -> Result<f64> {
    let dim = goals.first().map_or(0, |g| g.len());
    let design = |rows: &[usize]| {
        DMatrix::from_fn(rows.len(), dim + 1, |r, c| if c == 0 { 1.0 } else { goals[rows[r]][c - 1] })
    };
    let x = design(train);
    let y = DVector::from_iterator(train.len(), train.iter().map(|&i| intents[i]));
    let weights = x
        .svd(true, true)
        .solve(&y, 1e-10)
        .map_err(|e| Error::Argument(format!("probe fit failed: {e}")))?;
    let pred = design(test) * weights;
    let mean = test.iter().map(|&i| intents[i]).sum::<f64>() / test.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (k, &i) in test.iter().enumerate() {
        ss_res += (intents[i] - pred[k]).powi(2);
        ss_tot += (intents[i] - mean).powi(2);
    }
    Ok(if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot })
}

/// Mean pairwise goal distance within and across terciles.
pub fn tercile_distances(goals: &[&[f64]], intents: &[f64]) -> (f64, f64) {
    let bands: Vec<Tercile> = intents.iter().map(|&e| Tercile::of(e)).collect();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..goals.len() {
        for b in a + 1..goals.len() {
            let d = euclidean(goals[a], goals[b]);
            if bands[a] == bands[b] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    (mean(intra, n_intra), mean(inter, n_inter))
}

/// Probe, tercile distances, and `shuffles` label-permuted controls. The
/// train/test split and the permutations come from the `probe-split` stream
/// of `seed`.
pub fn goal_separability(samples: &[GoalSample], seed: u64, shuffles: usize) -> Result<SeparabilityReport> {
    if samples.len() < MIN_SESSIONS {
        return Err(Error::Argument(format!(
            "goal separability needs at least {MIN_SESSIONS} sessions, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].goal.len();
    if let Some(s) = samples.iter().find(|s| s.goal.len() != dim) {
        return Err(Error::shape(format!("goal of length {} among goals of length {dim}", s.goal.len())));
    }
    let goals: Vec<&[f64]> = samples.iter().map(|s| s.goal.as_slice()).collect();
    let intents: Vec<f64> = samples.iter().map(|s| s.intent).collect();

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut stream(seed, "probe-split", &[]));
    let cut = ((samples.len() as f64) * TRAIN_FRACTION).round() as usize;
    let (train, test) = order.split_at(cut);

    let r2 = probe_r2(&goals, &intents, train, test)?;
    let (intra, inter) = tercile_distances(&goals, &intents);
    let ratio = if inter == 0.0 { 1.0 } else { intra / inter };

    let mut null_r2 = Vec::with_capacity(shuffles);
    for k in 0..shuffles {
        let mut permuted = intents.clone();
        permuted.shuffle(&mut stream(seed, "probe-split", &[k as u64 + 1]));
        null_r2.push(probe_r2(&goals, &permuted, train, test)?);
    }

    Ok(SeparabilityReport {
        samples: samples.to_vec(),
        probe_r2: r2,
        intra_distance: intra,
        inter_distance: inter,
        distance_ratio: ratio,
        null_r2,
    })
}
